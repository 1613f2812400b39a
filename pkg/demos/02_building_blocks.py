"""The network's building blocks in isolation: gated convolution, dynamic
filtering with filter normalization, cross fusion, and attention refinement."""

import numpy as np

from podfcr import Tensor, autodiff as ad, nn
from podfcr.fusion import MMCF, MMRF
from podfcr.nn import delta_kernel, scdf_apply

rng = np.random.default_rng(1)

# Gated convolution: the sigmoid gate can pass or suppress each position
x = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)))
wf = Tensor(rng.normal(size=(4, 3, 3, 3)))
wg = Tensor(np.zeros((4, 3, 3, 3)))
open_gate = nn.gated_conv(x, wf, wg, Tensor(np.zeros(4)), Tensor(np.full(4, 30.0)))
shut_gate = nn.gated_conv(x, wf, wg, Tensor(np.zeros(4)), Tensor(np.full(4, -30.0)))
print("open-gate output magnitude:", np.abs(open_gate.data).mean())
print("shut-gate output magnitude:", np.abs(shut_gate.data).max())

# Dynamic filtering: delta kernels reproduce the input exactly
feat = Tensor(rng.normal(size=(1, 4, 6, 6)))
delta = delta_kernel(3)
spatial = Tensor(np.broadcast_to(delta[None, None, :, :, None, None], (1, 1, 3, 3, 6, 6)).copy())
channel = Tensor(np.broadcast_to(delta, (4, 3, 3)).copy())
print("delta-filter identity:", np.array_equal(scdf_apply(feat, spatial, channel).data, feat.data))

# The predictor emits per-pixel and per-channel kernels, normalized then
# shifted toward delta so the block starts near the identity
scdf = nn.SCDF(rng, 4)
sp, ch = scdf.predict(Tensor(rng.uniform(0, 1, (1, 4, 6, 6))))
print("spatial bank:", sp.shape, " channel bank:", ch.shape)

# Cross fusion: zeroing the cross weights decouples the two streams
block = MMCF(rng, 4)
f_opt = Tensor(rng.uniform(0, 1, (1, 4, 8, 8)))
f_sar = Tensor(rng.uniform(0, 1, (1, 4, 8, 8)))
_, _, fused = block(f_opt, f_sar)
print("fused output channels:", fused.shape[1], "(= 2x stream width)")

# Refinement fusion is residual: identical shape out, gradients to all inputs
mmrf = MMRF(rng, 8)
branches = [Tensor(rng.uniform(0, 1, (1, 8, 4, 4)), requires_grad=True) for _ in range(3)]
refined = mmrf(*branches)
ad.tsum(ad.mul(refined, refined)).backward()
print("refined:", refined.shape, " grads:",
      [f"{np.linalg.norm(b.grad):.3f}" for b in branches])
