"""The detector: Sinc front end, residual stack, GRU head, two-class output."""

from __future__ import annotations

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import GRU, Linear, Module, fms, gru_forward  # noqa: F401  (re-exported)
from .orthogonality import OrthRegConfig
from .sinc import init_linear_scale
from .tcn import ResidualStack, StackConfig
from .tensor import Tensor, log_softmax

log = logging.getLogger(__name__)

BONAFIDE = 1
SPOOF = 0

FAMILY_NAMES = {
    (True, True): "TO-RawNet",
    (True, False): "Orth-RawNet",
    (False, True): "TCN-RawNet",
    (False, False): "RawNet",
}


@dataclass
class ModelConfig:
    profile: str = "M"
    lam: float = 0.1
    use_orth: bool = True
    use_tcn: bool = True
    gru_hidden: int = 1024
    n_classes: int = 2
    n_filters: int = 128
    filter_length: int = 129
    sample_rate: int = 16000
    sinc_window: str = "hamming"
    sinc_unit_norm: bool = True
    freeze_sinc: bool = False
    kernel_size: int = 3
    max_dilation: int = 32
    pool_factor: int = 3
    leaky_slope: float = 0.01
    orth_stride: int = 1
    orth_norm: str = "squared"
    orth_targets: tuple[str, ...] = ("sinc",)
    input_samples: int = 64600
    class_weights: tuple[float, float] | None = None
    seed: int = 0

    @property
    def family(self) -> str:
        return FAMILY_NAMES[(self.use_orth, self.use_tcn)]

    @property
    def name(self) -> str:
        return f"{self.family}-{self.profile}"

    def orth(self) -> OrthRegConfig:
        return OrthRegConfig(stride=self.orth_stride, lam=self.lam if self.use_orth else 0.0, norm=self.orth_norm)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "orth_targets" in d:
            d["orth_targets"] = tuple(d["orth_targets"])
        if d.get("class_weights") is not None:
            d["class_weights"] = tuple(d["class_weights"])
        return cls(**d)


class TORawNet(Module):
    """Sinc-conv -> residual stack (dilated or plain) -> GRU -> logits.

    Logit column 1 is bona fide, column 0 spoof.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.sinc = init_linear_scale(
            cfg.n_filters,
            cfg.filter_length,
            cfg.sample_rate,
            window=cfg.sinc_window,
            trainable=not cfg.freeze_sinc,
            unit_norm=cfg.sinc_unit_norm,
        )
        self.stack = ResidualStack(
            StackConfig(
                profile=cfg.profile,
                channels_in=cfg.n_filters,
                kernel_size=cfg.kernel_size,
                max_dilation=cfg.max_dilation,
                pool_factor=cfg.pool_factor,
                dilated=cfg.use_tcn,
            ),
            rng,
            cfg.leaky_slope,
        )
        self.gru = GRU(self.stack.channels_out, cfg.gru_hidden, rng)
        self.head = Linear(cfg.gru_hidden, cfg.n_classes, rng)
        log.debug("%s: %d parameters", cfg.name, self.n_parameters())

    def __call__(self, waveform: Tensor) -> Tensor:
        return model_forward(self, waveform)

    def regularized_kernels(self) -> list[Tensor]:
        """Kernels the orthogonality penalty applies to, per ``orth_targets``."""
        kernels = []
        for target in self.cfg.orth_targets:
            if target == "sinc":
                kernels.append(self.sinc.kernel())
            elif target == "tcn":
                kernels.extend(b.dil_conv.weight for b in self.stack.blocks)
            else:
                raise ValueError(f"unknown orthogonality target {target!r}")
        return kernels


def model_forward(model: TORawNet, waveform: Tensor, strict: bool = False) -> Tensor:
    if strict and waveform.shape[2] != model.cfg.input_samples:
        raise ValueError(f"expected {model.cfg.input_samples} samples, got {waveform.shape[2]}")
    x = model.sinc(waveform)
    x = model.stack(x)
    h = model.gru(x.transpose(0, 2, 1))
    return model.head(h)


def task_loss(logits: Tensor, labels, class_weights=None) -> Tensor:
    """Mean (optionally class-weighted) softmax cross-entropy."""
    labels = np.asarray(labels, dtype=int)
    B = logits.shape[0]
    if B == 0 or labels.size == 0:
        raise ValueError("task_loss of an empty batch")
    if labels.shape != (B,):
        raise ValueError(f"{labels.shape[0]} labels for {B} logit rows")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(B), labels] = 1.0
    if class_weights is not None:
        w = np.asarray(class_weights, dtype=float)[labels]
        onehot *= w[:, None]
        denom = w.sum()
    else:
        denom = B
    return (log_softmax(logits, axis=1) * Tensor(onehot)).sum() * (-1.0 / denom)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def detection_scores(logits) -> np.ndarray:
    """Bona fide logit minus spoof logit; higher means more bona fide."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return data[:, BONAFIDE] - data[:, SPOOF]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"TORAWNET-CKPT-1\n"


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    epoch: int = 0
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Magic line, u64 header length, JSON header, then little-endian float64 payload."""
    index = []
    offset = 0
    for name, arr in ckpt.tensors.items():
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = json.dumps(
        {"config": ckpt.config, "epoch": ckpt.epoch, "meta": ckpt.meta, "tensors": index}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in ckpt.tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a TO-RawNet checkpoint (bad magic)")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = pos + entry["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=start)
        tensors[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    return Checkpoint(header["config"], tensors, header["epoch"], header.get("meta", {}))


def model_from_checkpoint(ckpt: Checkpoint) -> TORawNet:
    model = TORawNet(ModelConfig.from_dict(ckpt.config))
    model.load_state_dict(ckpt.tensors)
    return model
