"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive records its parents and a backward function that maps the
output gradient to parent gradients.  Backward functions never capture the
output tensor, so graphs contain no reference cycles and are freed as soon as
the last tensor referencing them goes away.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "ConvSpec",
    "make_node",
    "no_grad",
    "checked",
    "is_grad_enabled",
    "conv1d",
    "affine",
    "elementwise",
    "sigmoid",
    "tanh",
    "leaky_relu",
    "exp",
    "log",
    "absolute",
    "sin",
    "minimum",
    "batchnorm1d",
    "BatchNormState",
    "max_pool1d",
    "log_softmax",
    "concat",
    "finite_diff_check",
    "NonDeterministicError",
]

_GRAD_ENABLED = True
_CHECKED = True

# convolutions with at most this many taps accumulate one matmul per tap,
# longer kernels go through an explicit im2col per batch element
_PER_TAP_MAX_K = 8
# im2col over the whole batch when the column matrix stays below this many values
_IM2COL_BATCH_LIMIT = 4_000_000


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Toggle NaN/Inf checking of every op output and every gradient."""
    global _CHECKED
    prev = _CHECKED
    _CHECKED = enabled
    try:
        yield
    finally:
        _CHECKED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(arr: np.ndarray, what: str) -> None:
    # any NaN or Inf makes the sum non-finite; one pass, no temporary
    if _CHECKED and arr.size and not np.isfinite(arr.sum()):
        if not np.isfinite(arr).all():
            raise FloatingPointError(f"non-finite values produced by {what}")


class _Node:
    """Graph vertex: parent vertices plus the rule mapping output grad to parent grads.

    Nodes reference parent nodes rather than parent tensors, so an intermediate
    tensor's data is released once nothing but the graph refers to it, unless a
    backward rule explicitly kept the array it needs.
    """

    __slots__ = ("parents", "backward", "leaf", "op")

    def __init__(self, parents, backward, leaf=None, op="leaf"):
        self.parents = parents
        self.backward = backward
        self.leaf = leaf
        self.op = op


class Tensor:
    """An n-dimensional float64 array that can take part in differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.name = name
        self.grad = None
        self._node: _Node | None = None
        self.requires_grad = requires_grad

    @property
    def requires_grad(self) -> bool:
        return self._node is not None

    @requires_grad.setter
    def requires_grad(self, flag: bool) -> None:
        if flag and self._node is None:
            self._node = _Node((), None, leaf=self)
            self.grad = np.zeros_like(self.data)
        elif not flag:
            self._node = None
            self.grad = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None or self._node.backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        op = self._node.op if self._node is not None else "leaf"
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={op}{flag})"

    def backward(self, grad: np.ndarray | None = None, retain_graph: bool = True) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires it.

        Calling it again on the same graph accumulates again.  With
        ``retain_graph=False`` each interior node drops its saved arrays as soon
        as its rule has run, which roughly halves peak memory of a training step
        but makes the graph single-use.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if self._node is None:
            raise RuntimeError("loss is detached from every parameter (nothing requires grad)")

        order = _topological_order(self._node)
        grads: dict[int, np.ndarray] = {id(self._node): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward is None:
                leaf = node.leaf
                _check_finite(g, f"gradient of {leaf.name or 'leaf'}")
                leaf.grad += g
                continue
            if node.backward is _released:
                raise RuntimeError("graph was already released by an earlier backward(retain_graph=False)")
            parent_grads = node.backward(g)
            del g
            parents = node.parents
            if not retain_graph:
                node.backward = _released
                node.parents = ()
            for parent, pg in zip(parents, parent_grads):
                if pg is None or parent is None:
                    continue
                key = id(parent)
                if key in grads:
                    # not in place: a backward rule may hand the same array to two parents
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return elementwise("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", _as_tensor(other), self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return elementwise("scale", self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return elementwise("div", self, other)
        return elementwise("scale", self, 1.0 / float(other))

    def __pow__(self, p):
        p = float(p)
        x = self.data
        return make_node(
            x**p, (self,), lambda g: (g * p * x ** (p - 1),), "pow"
        )

    def __getitem__(self, idx):
        shape = self.data.shape

        def backward(g):
            out = np.zeros(shape)
            if _needs_add_at(idx):
                np.add.at(out, idx, g)
            else:
                out[idx] = g
            return (out,)

        return make_node(np.array(self.data[idx]), (self,), backward, "getitem")

    # shape and reductions -------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.data.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return make_node(out, (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else int(np.prod([self.data.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return make_node(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return make_node(
            np.ascontiguousarray(self.data.transpose(axes)),
            (self,),
            lambda g: (np.ascontiguousarray(g.transpose(inverse)),),
            "transpose",
        )


def _released(g):  # sentinel for interior nodes whose saved arrays were dropped
    raise RuntimeError("graph already released")


def _topological_order(root: _Node) -> list[_Node]:
    order: list[_Node] = []
    seen: set[int] = set()
    stack: list[tuple[_Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def _needs_add_at(idx) -> bool:
    # fancy indices may repeat positions, basic slicing never does
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str = "custom") -> Tensor:
    """Wrap ``data`` as the output of a primitive.

    ``backward(g)`` receives d(loss)/d(output) and must return one gradient (or
    None) per parent, in order.  It should close over plain arrays, not over
    the parent tensors.  This is also the hook for defining new primitives
    outside this module.
    """
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.name = None
    out.grad = None
    _check_finite(out.data, op)
    if _GRAD_ENABLED and any(p._node is not None for p in parents):
        out._node = _Node(tuple(p._node for p in parents), backward, op=op)
    else:
        out._node = None
    return out


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim != b.ndim or any(x != y and 1 not in (x, y) for x, y in zip(a.shape, b.shape)):
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def elementwise(op_name: str, a, b=None, *, slope: float = 0.01) -> Tensor:
    """Apply a pointwise op by name.

    Unary: ``sigmoid``, ``tanh``, ``leaky_relu``, ``exp``, ``log``, ``abs``,
    ``sin``.  Binary: ``add``, ``sub``, ``mul``, ``div``, ``minimum``.
    ``scale`` multiplies by the python number ``b``.  Binary operands must have
    the same rank, with size-1 axes broadcasting, or be scalars.
    """
    a = _as_tensor(a)
    x = a.data
    if op_name == "sigmoid":
        y = _sigmoid(x)
        return make_node(y, (a,), lambda g: (g * y * (1.0 - y),), op_name)
    if op_name == "tanh":
        y = np.tanh(x)
        return make_node(y, (a,), lambda g: (g * (1.0 - y * y),), op_name)
    if op_name == "leaky_relu":
        neg = x < 0
        y = np.where(neg, x * slope, x) if slope > 1 else np.maximum(x * slope, x)

        def backward(g):
            # np.where is several times slower than this on large arrays
            gx = neg.view(np.uint8).astype(np.float64)
            gx *= slope - 1.0
            gx += 1.0
            gx *= g
            return (gx,)

        return make_node(y, (a,), backward, op_name)
    if op_name == "exp":
        y = np.exp(x)
        return make_node(y, (a,), lambda g: (g * y,), op_name)
    if op_name == "log":
        return make_node(np.log(x), (a,), lambda g: (g / x,), op_name)
    if op_name == "abs":
        return make_node(np.abs(x), (a,), lambda g: (g * np.sign(x),), op_name)
    if op_name == "sin":
        return make_node(np.sin(x), (a,), lambda g: (g * np.cos(x),), op_name)
    if op_name == "scale":
        c = float(b)
        return make_node(x * c, (a,), lambda g: (g * c,), op_name)

    if b is None:
        raise ValueError(f"unknown op {op_name!r}" if op_name not in _BINARY else f"{op_name} needs two operands")
    if op_name not in _BINARY:
        raise ValueError(f"unknown op {op_name!r}")
    b = _as_tensor(b)
    y_in = b.data
    _check_broadcast(x, y_in, op_name)
    sa, sb = x.shape, y_in.shape
    if op_name == "add":
        return make_node(x + y_in, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), op_name)
    if op_name == "sub":
        return make_node(x - y_in, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), op_name)
    if op_name == "mul":
        need_a, need_b = a.requires_grad, b.requires_grad
        return make_node(
            x * y_in,
            (a, b),
            lambda g: (
                _unbroadcast(g * y_in, sa) if need_a else None,
                _unbroadcast(g * x, sb) if need_b else None,
            ),
            op_name,
        )
    if op_name == "div":
        return make_node(
            x / y_in,
            (a, b),
            lambda g: (_unbroadcast(g / y_in, sa), _unbroadcast(-g * x / (y_in * y_in), sb)),
            op_name,
        )
    # minimum: gradient goes to the first operand on ties
    take_a = x <= y_in
    return make_node(
        np.minimum(x, y_in),
        (a, b),
        lambda g: (_unbroadcast(np.where(take_a, g, 0.0), sa), _unbroadcast(np.where(take_a, 0.0, g), sb)),
        op_name,
    )


_BINARY = {"add", "sub", "mul", "div", "minimum"}


def sigmoid(x) -> Tensor:
    return elementwise("sigmoid", x)


def tanh(x) -> Tensor:
    return elementwise("tanh", x)


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    return elementwise("leaky_relu", x, slope=slope)


def exp(x) -> Tensor:
    return elementwise("exp", x)


def log(x) -> Tensor:
    return elementwise("log", x)


def absolute(x) -> Tensor:
    return elementwise("abs", x)


def sin(x) -> Tensor:
    return elementwise("sin", x)


def minimum(a, b) -> Tensor:
    return elementwise("minimum", a, b)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# ---------------------------------------------------------------------------
# linear maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        if self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ValueError(f"invalid conv spec {self}")

    def output_length(self, length: int, kernel_size: int) -> int:
        return (length + 2 * self.padding - self.dilation * (kernel_size - 1) - 1) // self.stride + 1


def _im2col(xp: np.ndarray, K: int, S: int, d: int, T_out: int) -> np.ndarray:
    """Contiguous (B*T_out, C*K) matrix with row (b, t), column (c, k) = xp[b, c, t*S + k*d]."""
    B, C, _ = xp.shape
    span = d * (K - 1) + 1
    win = sliding_window_view(xp, span, axis=-1)[:, :, : S * (T_out - 1) + 1 : S, ::d]
    # the reshape can return an overlapping view when C == 1; BLAS needs a real copy
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * T_out, C * K)


def conv1d(x: Tensor, kernel: Tensor, spec: ConvSpec | None = None, *, stride=None, padding=None, dilation=None) -> Tensor:
    """Cross-correlate ``x`` [B, C_in, T] with ``kernel`` [C_out, C_in, K].

    output[b, o, t] = sum_c sum_k kernel[o, c, k] * x_padded[b, c, t*S + k*d]
    """
    if spec is None:
        spec = ConvSpec(stride or 1, padding or 0, dilation or 1)
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ValueError(f"conv1d expects 3-d input and kernel, got {x.shape} and {kernel.shape}")
    B, C, T = x.shape
    O, C_k, K = kernel.shape
    if C != C_k:
        raise ValueError(f"conv1d: input has {C} channels but kernel expects {C_k}")
    S, P, d = spec.stride, spec.padding, spec.dilation
    T_out = spec.output_length(T, K)
    if T_out < 1:
        raise ValueError(f"conv1d: non-positive output length {T_out} for T={T}, K={K}, {spec}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (P, P))) if P else x.data
    w = kernel.data
    need_x, need_w = x.requires_grad, kernel.requires_grad
    stop = S * (T_out - 1) + 1
    out = np.empty((B, O, T_out))
    # per-tap weight matrices must be contiguous or matmul falls off BLAS
    wt = np.ascontiguousarray(w.transpose(2, 0, 1))
    if K <= _PER_TAP_MAX_K:
        out[...] = 0.0
        for k in range(K):
            out += np.matmul(wt[k], xp[:, :, k * d : k * d + stop : S])
    else:
        wmat = w.reshape(O, C * K)
        if B * T_out * C * K <= _IM2COL_BATCH_LIMIT:
            out[...] = (_im2col(xp, K, S, d, T_out) @ wmat.T).reshape(B, T_out, O).transpose(0, 2, 1)
        else:
            for b in range(B):
                np.matmul(wmat, _im2col(xp[b : b + 1], K, S, d, T_out).T, out=out[b])

    def backward(g):
        gx = gw = None
        if need_w:
            if K <= _PER_TAP_MAX_K:
                gwt = np.zeros((K, O, C))
                for k in range(K):
                    xs = xp[:, :, k * d : k * d + stop : S]
                    for b in range(B):
                        gwt[k] += g[b] @ xs[b].T
                gw = gwt.transpose(1, 2, 0).copy()
            elif B * T_out * C * K <= _IM2COL_BATCH_LIMIT:
                gflat = g.transpose(0, 2, 1).reshape(B * T_out, O)
                gw = (gflat.T @ _im2col(xp, K, S, d, T_out)).reshape(O, C, K)
            else:
                gmat = np.zeros((O, C * K))
                for b in range(B):
                    gmat += g[b] @ _im2col(xp[b : b + 1], K, S, d, T_out)
                gw = gmat.reshape(O, C, K)
        if need_x:
            gxp = np.zeros(xp.shape)
            if K <= _PER_TAP_MAX_K:
                for k in range(K):
                    wk = wt[k].T
                    for b in range(B):
                        gxp[b, :, k * d : k * d + stop : S] += wk @ g[b]
            else:
                wmat = w.reshape(O, C * K)
                # (B, C, K, T_out) column gradients, scattered back tap by tap
                gcols = np.matmul(wmat.T, g).reshape(B, C, K, T_out)
                for k in range(K):
                    gxp[:, :, k * d : k * d + stop : S] += gcols[:, :, k, :]
            gx = gxp[:, :, P : P + T] if P else gxp
        return gx, gw

    return make_node(out, (x, kernel), backward, "conv1d")


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for x [B, F_in], weight [F_out, F_in]."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"affine: cannot map input {x.shape} with weight {weight.shape}")
    out = x.data @ weight.data.T
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"affine: bias shape {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents = (x, weight, bias)
    xd, wd = x.data, weight.data
    need_x, need_w = x.requires_grad, weight.requires_grad

    def backward(g):
        grads = [
            g @ wd if need_x else None,
            g.T @ xd if need_w else None,
        ]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return make_node(out, parents, backward, "affine")


# ---------------------------------------------------------------------------
# normalization and pooling
# ---------------------------------------------------------------------------


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer (not differentiated)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    updates: np.ndarray = None  # shape (1,), float so it fits the checkpoint payload

    def __post_init__(self):
        if self.updates is None:
            self.updates = np.zeros(1)

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    state: BatchNormState,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
    warmup: bool = True,
) -> Tensor:
    """Normalize [B, C, T] per channel over (B, T), then scale and shift.

    In training mode the batch statistics are used and the running state is
    updated in place (unbiased variance, as is conventional).  With ``warmup``
    update k uses weight max(momentum, 1/k), a plain average until 1/k drops
    below the momentum.  Without it the initial mean 0 / var 1 lingers for
    tens of updates, which swamps eval-mode scoring on short runs.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    B, C, T = x.shape
    if state.running_mean.shape != (C,) or weight.shape != (C,) or bias.shape != (C,):
        raise ValueError(f"batchnorm1d: {C} channels but state/params of width {state.running_mean.shape}")
    xd = x.data
    weight_data = weight.data
    if training:
        n = B * T
        if n < 2:
            raise ValueError("batchnorm1d: training mode needs at least two values per channel")
        mean = xd.sum(axis=2).sum(axis=0) / n
        var = np.maximum(np.einsum("bct,bct->c", xd, xd) / n - mean * mean, 0.0)
        if eps == 0 and np.any(var == 0):
            raise FloatingPointError("batchnorm1d: zero variance with eps=0")
        state.updates += 1
        m = max(momentum, 1.0 / state.updates[0]) if warmup else momentum
        state.running_mean *= 1.0 - m
        state.running_mean += m * mean
        state.running_var *= 1.0 - m
        state.running_var += m * var * n / (n - 1)
    else:
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    scale = (weight.data * inv_std)[None, :, None]
    shift = (bias.data - mean * weight.data * inv_std)[None, :, None]
    out = xd * scale
    out += shift
    need_x = x.requires_grad

    def backward(g):
        # the normalized input is never stored; everything is per-channel
        # affine in (g, x), so the sums are taken on the raw arrays
        g_beta = g.sum(axis=2).sum(axis=0)
        g_gamma = inv_std * (np.einsum("bct,bct->c", g, xd) - mean * g_beta)
        gx = None
        if need_x:
            if training:
                n = B * T
                a = weight_data * inv_std
                b = -a * inv_std * g_gamma / n
                c = -a * g_beta / n - b * mean
                gx = g * a[None, :, None]
                gx += xd * b[None, :, None]
                gx += c[None, :, None]
            else:
                gx = g * scale
        return gx, g_gamma, g_beta

    return make_node(out, (x, weight, bias), backward, "batchnorm1d")


def max_pool1d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping max pooling over time; a trailing remainder is dropped."""
    x = _as_tensor(x)
    B, C, T = x.shape
    if factor == 1:
        return x
    T_out = T // factor
    if T_out < 1:
        raise ValueError(f"max_pool1d: length {T} too short for factor {factor}")
    blocks = x.data[:, :, : T_out * factor].reshape(B, C, T_out, factor)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros((B, C, T_out, factor))
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros((B, C, T))
        gx[:, :, : T_out * factor] = gb.reshape(B, C, T_out * factor)
        return (gx,)

    return make_node(out, (x,), backward, "max_pool1d")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return make_node(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


class NonDeterministicError(RuntimeError):
    pass


def finite_diff_check(f: Callable[..., Tensor], point, h: float = 1e-5) -> float:
    """Compare analytic gradients of scalar ``f`` with central differences.

    ``point`` is an array (or Tensor) or a sequence of them, passed to ``f`` as
    positional tensors.  Returns max |analytic - numeric| / max(1, |analytic|)
    over all coordinates of all inputs.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    multi = isinstance(point, (list, tuple))
    points = [np.array(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in (point if multi else [point])]

    def value(arrays) -> float:
        with no_grad():
            out = f(*[Tensor(a) for a in arrays])
        if out.size != 1:
            raise ValueError("finite_diff_check: f must return a scalar")
        return float(out.data.reshape(-1)[0])

    base = value(points)
    if value(points) != base:
        raise NonDeterministicError("f returned different values for the same input")

    leaves = [Tensor(p, requires_grad=True) for p in points]
    f(*leaves).backward()

    worst = 0.0
    for i, p in enumerate(points):
        analytic = leaves[i].grad.reshape(-1)
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = value(points)
            flat[j] = orig - h
            down = value(points)
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            err = abs(analytic[j] - numeric) / max(1.0, abs(analytic[j]))
            worst = max(worst, err)
    if math.isnan(worst):
        return math.inf
    return worst
