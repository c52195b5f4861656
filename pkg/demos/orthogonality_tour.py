"""What the orthogonality penalty sees, and what a few descent steps do to it.

Run: python3 demos/orthogonality_tour.py
"""

import numpy as np

from torawnet.orthogonality import (
    OrthRegConfig,
    build_dbt_matrix,
    dbt_orthogonality_residual,
    gram_center,
    off_diagonal_mass,
    orth_loss,
    self_convolution,
)
from torawnet.sinc import init_linear_scale
from torawnet.tensor import Tensor
from torawnet.training import OptimState, adam_step

# a small filterbank keeps the DBT matrix printable
fb = init_linear_scale(n_filters=8, filter_length=33, unit_norm=True)
k = fb.kernel().data
f1, f2 = fb.cutoffs_hz()
print("cutoffs (Hz):")
for a, b in zip(f1, f2):
    print(f"  {a:8.1f} {b:8.1f}")

cfg = OrthRegConfig(stride=1)
z = self_convolution(Tensor(k), cfg).data
print(f"\nself-convolution: {z.shape}, center index {z.shape[2] // 2}")
print("center slice equals the filter Gram matrix:", np.allclose(z[:, :, z.shape[2] // 2], gram_center(k), atol=1e-12))
print(f"off-diagonal Gram mass {off_diagonal_mass(k):.5f}, penalty {orth_loss(Tensor(k), cfg).item():.3f}")

# the explicit DBT view of the same kernel on a 64-sample input
M = build_dbt_matrix(k, 64)
print(f"DBT matrix {M.shape}, row-orthogonality residual {dbt_orthogonality_residual(M):.3f}")

# The penalty counts every lag of the self-convolution, not only the center
# slice.  Descending on it alone shows which part gives way.
def descend(n_filters, length, lr, steps=30):
    bank = init_linear_scale(n_filters=n_filters, filter_length=length, unit_norm=True)
    params = [("f_low", bank.f_low), ("band", bank.band)]
    opt = OptimState.create(params, lr=lr)
    print(f"\n{n_filters} filters x {length} taps, Adam lr {lr}")
    print("step  penalty      center off-diag mass")
    for step in range(steps + 1):
        bank.f_low.zero_grad()
        bank.band.zero_grad()
        loss = orth_loss(bank.kernel(), cfg)
        if step % 10 == 0:
            print(f"{step:4d}  {loss.item():11.3f}  {off_diagonal_mass(bank.kernel().data):.5f}")
        if step < steps:
            loss.backward()
            adam_step(params, opt)


# small bank: the lag terms dominate, bands spread out and center overlap grows
descend(8, 33, 20.0)
# full-size bank: center overlap falls along with the penalty
descend(128, 129, 1.0)
