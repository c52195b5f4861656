"""Dilation schedule, receptive field, and an impulse probe that confirms it.

Run: python3 demos/receptive_field.py
"""

import numpy as np

from torawnet.tcn import DilatedBlock, DilatedBlockConfig, dilation_schedule, receptive_field
from torawnet.tensor import Tensor

schedule = dilation_schedule(12, 32)
print("dilations:", schedule)
for pool in (1, 3):
    print(f"receptive field, K=3, pool {pool}: {receptive_field(schedule, 3, pool)} samples")

# trace which input samples can influence one output frame of the no-pool stack
rng = np.random.default_rng(0)
blocks = []
for d in schedule:
    b = DilatedBlock(DilatedBlockConfig(1, 1, 3, d), rng, residual=False).eval()
    b.dil_conv.weight.data = np.abs(b.dil_conv.weight.data) + 0.1  # no accidental cancellation
    b.pointwise.weight.data = np.abs(b.pointwise.weight.data) + 0.1
    blocks.append(b)
T = 401
x = Tensor(np.zeros((1, 1, T)), requires_grad=True)
y = x
for b in blocks:
    y = b(y)
y[:, 0, T // 2].sum().backward()
touched = np.flatnonzero(x.grad[0, 0])
print(f"impulse probe: output frame {T // 2} depends on inputs {touched[0]}..{touched[-1]} "
      f"({touched[-1] - touched[0] + 1} samples)")
