"""Tour of the autodiff engine: building blocks, gradients, and the
finite-difference verification that backs every operator."""

import numpy as np

from podfcr import Tensor, autodiff as ad
from podfcr.gradcheck import gradcheck

# A tiny computation: loss = sum(sigmoid(conv(x, w)))
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(1, 2, 6, 6)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
b = Tensor(np.zeros(3), requires_grad=True)

out = ad.sigmoid(ad.conv2d(x, w, b, padding=1))
loss = ad.tsum(out)
loss.backward()

print("loss:", loss.item())
print("grad norms: x", np.linalg.norm(x.grad), " w", np.linalg.norm(w.grad),
      " b", np.linalg.norm(b.grad))

# The tape is single-use: a second backward raises
try:
    loss.backward()
except ad.GraphError as exc:
    print("second backward ->", exc)

# Central finite differences confirm the tape gradient of any operator
x2 = Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
w2 = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
err = gradcheck(lambda: ad.conv2d(x2, w2, padding=1), [x2, w2])
print(f"conv2d finite-difference relative error: {err:.2e}")

# Transposed convolution is the exact adjoint of convolution
xa = rng.normal(size=(1, 2, 4, 4))
wa = rng.normal(size=(3, 2, 4, 4))
fwd = ad.conv2d(Tensor(xa), Tensor(wa), stride=2, padding=1)
ya = rng.normal(size=fwd.shape)
lhs = float((fwd.data * ya).sum())
rhs = float((xa * ad.conv_transpose2d(Tensor(ya), Tensor(wa), stride=2, padding=1).data).sum())
print(f"adjoint identity <conv(x), y> = <x, convT(y)>: {lhs:.6f} vs {rhs:.6f}")
