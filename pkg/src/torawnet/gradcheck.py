"""Finite-difference checks for every differentiable operation.

Each case builds a scalar by contracting the op's output with a fixed random
tensor, so the whole Jacobian is exercised, and is checked at several random
points.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import fms, gru_forward
from .model import task_loss
from .orthogonality import OrthRegConfig, orth_loss
from .sinc import bandpass_kernel, window_taps
from .tensor import (
    BatchNormState,
    ConvSpec,
    Tensor,
    affine,
    batchnorm1d,
    conv1d,
    elementwise,
    finite_diff_check,
    log_softmax,
    max_pool1d,
)

TOLERANCE = 1e-4


def _contract(out: Tensor, probe: np.ndarray) -> Tensor:
    return (out * Tensor(probe)).sum()


def _case_conv(rng):
    spec = ConvSpec(int(rng.integers(1, 3)), int(rng.integers(0, 3)), int(rng.integers(1, 3)))
    x = rng.normal(size=(2, 3, 11))
    w = rng.normal(size=(4, 3, 3))
    probe = rng.normal(size=(2, 4, spec.output_length(11, 3)))
    return (lambda x, w: _contract(conv1d(x, w, spec), probe)), [x, w]


def _case_conv_long(rng):
    # long kernels take the im2col path
    x = rng.normal(size=(2, 1, 40))
    w = rng.normal(size=(3, 1, 17))
    probe = rng.normal(size=(2, 3, 24))
    return (lambda x, w: _contract(conv1d(x, w, ConvSpec()), probe)), [x, w]


def _case_affine(rng):
    x, w, b = rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=4)
    probe = rng.normal(size=(3, 4))
    return (lambda x, w, b: _contract(affine(x, w, b), probe)), [x, w, b]


def _unary(name, **kw):
    def case(rng):
        x = rng.normal(size=(3, 4))
        if name == "log":
            x = np.abs(x) + 0.5
        probe = rng.normal(size=(3, 4))
        return (lambda x: _contract(elementwise(name, x, **kw), probe)), [x]

    return case


def _binary(name):
    def case(rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(1, 4))  # broadcast operand
        if name == "div":
            b = np.sign(b) * (np.abs(b) + 0.5)
        probe = rng.normal(size=(3, 4))
        return (lambda a, b: _contract(elementwise(name, a, b), probe)), [a, b]

    return case


def _case_batchnorm(rng):
    x = rng.normal(size=(3, 4, 5)) * 2 + 1
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    probe = rng.normal(size=(3, 4, 5))

    def f(x, gamma, beta):
        return _contract(batchnorm1d(x, gamma, beta, BatchNormState.fresh(4), training=True), probe)

    return f, [x, gamma, beta]


def _case_sinc(rng):
    n, length, sr = 4, 33, 16000
    taps = window_taps(length, "hamming")
    # cutoffs in kHz so gradients are O(1) and the relative error is meaningful
    f1 = rng.uniform(0.05, 3.0, size=n)
    f2 = f1 + rng.uniform(0.1, 3.0, size=n)
    probe = rng.normal(size=(n, 1, length))

    def f(f1, f2):
        g = bandpass_kernel(f1 * 1000.0, f2 * 1000.0, length, sr, taps)
        g = g / ((g * g).sum(axis=2, keepdims=True) ** 0.5)  # unit-norm variant
        return _contract(g, probe)

    return f, [f1, f2]


def _case_fms(rng):
    x = rng.normal(size=(2, 3, 6))
    w, b = rng.normal(size=(3, 3)), rng.normal(size=3)
    probe = rng.normal(size=(2, 3, 6))
    return (lambda x, w, b: _contract(fms(x, w, b), probe)), [x, w, b]


def _case_gru(rng):
    B, T, F, H = 2, 3, 3, 4
    x = rng.normal(size=(B, T, F))
    w_ih, w_hh = rng.normal(size=(3 * H, F)) * 0.5, rng.normal(size=(3 * H, H)) * 0.5
    b_ih, b_hh = rng.normal(size=3 * H) * 0.5, rng.normal(size=3 * H) * 0.5
    probe = rng.normal(size=(B, H))
    return (lambda *a: _contract(gru_forward(*a), probe)), [x, w_ih, w_hh, b_ih, b_hh]


def _case_maxpool(rng):
    x = rng.normal(size=(2, 3, 10))
    probe = rng.normal(size=(2, 3, 3))
    return (lambda x: _contract(max_pool1d(x, 3), probe)), [x]


def _case_log_softmax(rng):
    x = rng.normal(size=(3, 4)) * 3
    probe = rng.normal(size=(3, 4))
    return (lambda x: _contract(log_softmax(x, axis=1), probe)), [x]


def _case_cross_entropy(rng):
    logits = rng.normal(size=(5, 2)) * 2
    labels = rng.integers(0, 2, size=5)
    return (lambda z: task_loss(z, labels)), [logits]


def _case_orth(stride):
    def case(rng):
        k = rng.normal(size=(4, 2, 5)) * 0.5
        cfg = OrthRegConfig(stride=stride)
        return (lambda k: orth_loss(k, cfg)), [k]

    return case


CASES: dict[str, Callable] = {
    "conv1d": _case_conv,
    "conv1d_im2col": _case_conv_long,
    "affine": _case_affine,
    **{f"elementwise_{n}": _unary(n) for n in ("sigmoid", "tanh", "exp", "log", "abs", "sin")},
    "elementwise_leaky_relu": _unary("leaky_relu", slope=0.2),
    **{f"elementwise_{n}": _binary(n) for n in ("add", "sub", "mul", "div", "minimum")},
    "batchnorm": _case_batchnorm,
    "sinc_kernel": _case_sinc,
    "fms": _case_fms,
    "gru": _case_gru,
    "max_pool": _case_maxpool,
    "log_softmax": _case_log_softmax,
    "cross_entropy": _case_cross_entropy,
    "orth_loss_stride1": _case_orth(1),
    "orth_loss_stride2": _case_orth(2),
}


def run_suite(points: int = 10, seed: int = 0, names=None) -> dict[str, float]:
    """Worst relative error per op over ``points`` random points."""
    results = {}
    for name, make in CASES.items():
        if names is not None and name not in names:
            continue
        rng = np.random.default_rng([seed, sorted(CASES).index(name)])
        worst = 0.0
        for _ in range(points):
            f, arrays = make(rng)
            worst = max(worst, finite_diff_check(f, arrays, h=1e-5))
        results[name] = worst
    return results
