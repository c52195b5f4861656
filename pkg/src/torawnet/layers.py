"""Parameter containers and the small layers the detector is assembled from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import (
    BatchNormState,
    ConvSpec,
    Tensor,
    affine,
    batchnorm1d,
    conv1d,
    sigmoid,
    tanh,
)


class Module:
    """Discovers parameters, buffers and children from instance attributes.

    Attribute insertion order fixes the parameter order, which keeps
    checkpoints and optimizer state aligned across runs.
    """

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters() if p.requires_grad]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, BatchNormState):
                yield full + ".running_mean", value.running_mean
                yield full + ".running_var", value.running_var
                yield full + ".updates", value.updates
            elif isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")

    def _children(self) -> Iterator["Module"]:
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, list):
                yield from (v for v in value if isinstance(v, Module))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"param/{n}": p.data.copy() for n, p in self.named_parameters()}
        state.update({f"buffer/{n}": b.copy() for n, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = {f"param/{n}": p for n, p in self.named_parameters()}
        buffers = {f"buffer/{n}": b for n, b in self.named_buffers()}
        missing = (set(expected) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)[:5]}")
        for key, p in expected.items():
            if state[key].shape != p.shape:
                raise ValueError(f"{key}: shape {state[key].shape} does not match {p.shape}")
            p.data = np.array(state[key], dtype=np.float64)
        for key, b in buffers.items():
            b[...] = state[key]

    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, slope: float = 0.01) -> np.ndarray:
    gain = math.sqrt(2.0 / (1.0 + slope**2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator,
                 dilation: int = 1, padding: int = 0, bias: bool = False, name: str = "conv"):
        self.spec = ConvSpec(1, padding, dilation)
        self.weight = Tensor(kaiming_uniform(rng, (c_out, c_in, kernel_size), c_in * kernel_size),
                             requires_grad=True, name=f"{name}.weight")
        if bias:
            self.bias = Tensor(np.zeros((1, c_out, 1)), requires_grad=True, name=f"{name}.bias")
        else:
            self.bias = None

    def __call__(self, x: Tensor) -> Tensor:
        y = conv1d(x, self.weight, self.spec)
        return y + self.bias if self.bias is not None else y


class BatchNorm1d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, warmup: bool = True):
        self.weight = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.state = BatchNormState.fresh(channels)
        self.eps = eps
        self.momentum = momentum
        self.warmup = warmup

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm1d(x, self.weight, self.bias, self.state, self.training, self.eps, self.momentum,
                           self.warmup)


class Linear(Module):
    def __init__(self, f_in: int, f_out: int, rng: np.random.Generator, slope: float = 0.01):
        self.weight = Tensor(kaiming_uniform(rng, (f_out, f_in), f_in, slope), requires_grad=True)
        self.bias = Tensor(np.zeros(f_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class FMS(Module):
    """Filter-wise feature map scaling: x * s + s with s = sigmoid(W mean_t(x) + b)."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.fc = Linear(channels, channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        B, C, _ = x.shape
        s = sigmoid(self.fc(x.mean(axis=2))).reshape(B, C, 1)
        return x * s + s


def fms(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    B, C, _ = x.shape
    s = sigmoid(affine(x.mean(axis=2), weight, bias)).reshape(B, C, 1)
    return x * s + s


class GRU(Module):
    """Single-layer GRU returning the final hidden state.

    r = sig(Wir x + bir + Whr h + bhr), z = sig(Wiz x + biz + Whz h + bhz),
    n = tanh(Win x + bin + r * (Whn h + bhn)), h' = (1 - z) * n + z * h.
    """

    def __init__(self, f_in: int, hidden: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.w_ih = Tensor(rng.uniform(-bound, bound, (3 * hidden, f_in)), requires_grad=True)
        self.w_hh = Tensor(rng.uniform(-bound, bound, (3 * hidden, hidden)), requires_grad=True)
        self.b_ih = Tensor(rng.uniform(-bound, bound, 3 * hidden), requires_grad=True)
        self.b_hh = Tensor(rng.uniform(-bound, bound, 3 * hidden), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return gru_forward(x, self.w_ih, self.w_hh, self.b_ih, self.b_hh)


def gru_cell(gi: Tensor, h: Tensor, w_hh: Tensor, b_hh: Tensor) -> Tensor:
    """One GRU update given the precomputed input projection ``gi`` [B, 3H]."""
    H = h.shape[1]
    gh = affine(h, w_hh, b_hh)
    r = sigmoid(gi[:, :H] + gh[:, :H])
    z = sigmoid(gi[:, H : 2 * H] + gh[:, H : 2 * H])
    n = tanh(gi[:, 2 * H :] + r * gh[:, 2 * H :])
    return (1.0 - z) * n + z * h


def gru_forward(x: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor) -> Tensor:
    B, T, F = x.shape
    if T < 1:
        raise ValueError("GRU needs at least one time step")
    H = w_hh.shape[1]
    gi_all = affine(x.reshape(B * T, F), w_ih, b_ih).reshape(B, T, 3 * H)
    h = Tensor(np.zeros((B, H)))
    for t in range(T):
        h = gru_cell(gi_all[:, t, :], h, w_hh, b_hh)
    return h
