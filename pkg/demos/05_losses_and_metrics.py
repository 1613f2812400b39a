"""The composite loss and the evaluation metrics, with their analytic
anchor points."""

import numpy as np

from podfcr import Tensor, metrics
from podfcr.losses import loss_global, loss_local, loss_ssim, loss_total, ssim

rng = np.random.default_rng(3)
target = Tensor(rng.uniform(0, 1, (1, 4, 16, 16)))
pred = Tensor(np.clip(target.data + rng.normal(0, 0.08, target.shape), 0, 1))
mask = Tensor((rng.random((1, 1, 16, 16)) > 0.6).astype(np.float64))

lg = loss_global(pred, target)
ll = loss_local(pred, target, mask)
ls = loss_ssim(pred, target)
total = loss_total(pred, target, mask, lambda_local=10.0, lambda_ssim=1.0)
print(f"L_g={lg.item():.4f}  L_l={ll.item():.4f}  L_ssim={ls.item():.4f}")
print(f"total = L_g + 10*L_l + 1*L_ssim = {total.item():.4f}")
print("masked loss never exceeds the global one:", ll.item() <= lg.item())

# anchor values
ones = np.ones((4, 8, 8))
halves = np.full((4, 8, 8), 0.5)
print(f"\npsnr(0.5s vs 1s) = {metrics.psnr(halves, ones):.4f} dB (analytic 6.0206)")
base = rng.random((4, 8, 8))
print(f"cc under affine change = {metrics.cc(3 * base + 0.2, base):.4f}")
x = rng.uniform(0.2, 1.0, (4, 8, 8))
print(f"sam(x, 2x) = {metrics.sam(x, 2 * x):.2e} degrees")
print(f"ssim(x, x) = {ssim(Tensor(x[None]), Tensor(x[None])).item():.6f}")

zeros = Tensor(np.zeros((1, 1, 16, 16)))
ones_t = Tensor(np.ones((1, 1, 16, 16)))
c1, c2 = 0.01 ** 2, 0.03 ** 2
print(f"ssim(0s, 1s) = {ssim(zeros, ones_t).item():.6e} "
      f"(closed form {c1 * c2 / ((1 + c1) * c2):.6e})")
