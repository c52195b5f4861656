"""Orthogonal-convolution regularizer for 1-D kernels.

Two routes to the same condition: the explicit doubly block-Toeplitz matrix of
a convolution, whose rows should be orthonormal, and the much cheaper
self-convolution of the kernel, which should equal an identity at zero shift
and vanish at every other shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import ConvSpec, Tensor, conv1d


def compute_padding(kernel_size: int, stride: int) -> int:
    if kernel_size < 1 or stride < 1:
        raise ValueError("kernel size and stride must be positive")
    return (kernel_size - 1) // stride * stride


@dataclass(frozen=True)
class OrthRegConfig:
    stride: int = 1
    lam: float = 0.1
    norm: str = "squared"  # "plain" takes the square root, for ablation

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if self.lam < 0:
            raise ValueError("regularization weight must be non-negative")
        if self.norm not in ("squared", "plain"):
            raise ValueError(f"unknown norm {self.norm!r}")

    def padding(self, kernel_size: int) -> int:
        return compute_padding(kernel_size, self.stride)

    def output_length(self, kernel_size: int) -> int:
        return 2 * self.padding(kernel_size) // self.stride + 1


def self_convolution(kernel: Tensor, cfg: OrthRegConfig = OrthRegConfig()) -> Tensor:
    """Convolve the kernel with itself, treating its filters as a batch.

    Z[i, j, t] = sum_c sum_k K[j, c, k] * K_padded[i, c, t*S + k], shape (O, O, 2P/S + 1).
    """
    K = kernel.shape[2]
    spec = ConvSpec(stride=cfg.stride, padding=cfg.padding(K))
    return conv1d(kernel, kernel, spec)


def identity_target(n: int, length: int) -> np.ndarray:
    target = np.zeros((n, n, length))
    target[:, :, length // 2] = np.eye(n)
    return target


def orth_loss(kernel: Tensor, cfg: OrthRegConfig = OrthRegConfig()) -> Tensor:
    """||Z - I_r0||_F^2 (or its square root with ``norm="plain"``)."""
    z = self_convolution(kernel, cfg)
    diff = z - Tensor(identity_target(kernel.shape[0], z.shape[2]))
    sq = (diff * diff).sum()
    if cfg.norm == "plain":
        return sq ** 0.5
    return sq


def gram_center(kernel) -> np.ndarray:
    """Gram matrix of the flattened filters, i.e. the zero-shift slice of Z."""
    w = np.asarray(kernel.data if isinstance(kernel, Tensor) else kernel)
    flat = w.reshape(w.shape[0], -1)
    return flat @ flat.T


def off_diagonal_mass(kernel) -> float:
    """Sum of squared off-diagonal Gram entries, a scalar filter-correlation measure."""
    g = gram_center(kernel)
    return float((g**2).sum() - (np.diag(g) ** 2).sum())


def build_dbt_matrix(kernel, length_in: int, spec: ConvSpec = ConvSpec()) -> np.ndarray:
    """Matrix M of shape (O*T2, I*T1) with M @ x.ravel() == conv1d(x, kernel).ravel()."""
    w = np.asarray(kernel.data if isinstance(kernel, Tensor) else kernel, dtype=np.float64)
    O, I, K = w.shape
    T2 = spec.output_length(length_in, K)
    if T2 < 1:
        raise ValueError(f"input length {length_in} gives no output positions for kernel size {K}")
    M = np.zeros((O * T2, I * length_in))
    for t in range(T2):
        for k in range(K):
            pos = t * spec.stride + k * spec.dilation - spec.padding
            if 0 <= pos < length_in:
                # rows o*T2 + t, columns c*T1 + pos
                M[np.arange(O)[:, None] * T2 + t, np.arange(I)[None, :] * length_in + pos] += w[:, :, k]
    return M


def dbt_orthogonality_residual(M: np.ndarray) -> float:
    """||M M^T - I||_F^2: distance of the rows of M from an orthonormal set."""
    gram = M @ M.T
    gram[np.diag_indices_from(gram)] -= 1.0
    return float((gram**2).sum())


def total_loss(task_loss: Tensor, kernels: Iterable[Tensor], cfg: OrthRegConfig) -> Tensor:
    if cfg.lam == 0:
        return task_loss
    reg = None
    for k in kernels:
        term = orth_loss(k, cfg)
        reg = term if reg is None else reg + term
    if reg is None:
        return task_loss
    return task_loss + reg * cfg.lam
