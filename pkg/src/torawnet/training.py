"""Adam, the epoch loop, dev-set model selection and multi-seed summaries."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, TextIO

import numpy as np

from .data import AugmentConfig, Split, fix_length, iterate_batches, rawboost_augment
from .metrics import ScoreRecord, eer_from_arrays, write_scores
from .model import Checkpoint, ModelConfig, TORawNet, detection_scores, save_checkpoint, task_loss
from .orthogonality import off_diagonal_mass, orth_loss, total_loss
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Training produced a NaN or infinite value."""


@dataclass
class OptimState:
    """Adam moments and step count, aligned with a fixed parameter list."""

    names: list[str]
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0

    @classmethod
    def create(cls, named_params: Sequence[tuple[str, Tensor]], lr: float = 5e-5, **kw) -> "OptimState":
        return cls(
            [n for n, _ in named_params],
            [np.zeros_like(p.data) for _, p in named_params],
            [np.zeros_like(p.data) for _, p in named_params],
            lr=lr,
            **kw,
        )


def adam_step(named_params: Sequence[tuple[str, Tensor]], state: OptimState, lr: float | None = None) -> None:
    """One bias-corrected Adam update of every parameter, in place."""
    if len(named_params) != len(state.m):
        raise ValueError(f"{len(named_params)} parameters but optimizer state for {len(state.m)}")
    for name, p in named_params:
        g = p.grad
        if g is None:
            raise ValueError(f"parameter {name} has no gradient buffer")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name}")
    state.step += 1
    t = state.step
    lr = state.lr if lr is None else lr
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for (name, p), m, v in zip(named_params, state.m, state.v):
        if m.shape != p.shape:
            raise ValueError(f"optimizer moment for {name} has shape {m.shape}, parameter {p.shape}")
        g = p.grad
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def optimizer_tensors(state: OptimState) -> dict[str, np.ndarray]:
    """Adam moments keyed for a checkpoint; the step count goes in the header."""
    out = {}
    for name, m, v in zip(state.names, state.m, state.v):
        out[f"optim/m/{name}"] = m.copy()
        out[f"optim/v/{name}"] = v.copy()
    return out


def restore_optimizer(state: OptimState, tensors: dict[str, np.ndarray], step: int) -> None:
    for i, name in enumerate(state.names):
        state.m[i][...] = tensors[f"optim/m/{name}"]
        state.v[i][...] = tensors[f"optim/v/{name}"]
    state.step = step


@dataclass
class RunPlan:
    """Everything about a run that is not the network itself."""

    epochs: int = 15
    batch_size: int = 32
    seeds: tuple[int, ...] = (0, 1, 2)
    lr: float = 5e-5
    lr_schedule: str = "constant"  # or "cosine"
    weight_decay: float = 0.0
    grad_clip: float = 0.0  # global L2 norm, 0 = off
    eval_every: int = 1
    random_crop: bool = False
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "cosine":
            return 0.5 * self.lr * (1 + math.cos(math.pi * (epoch - 1) / self.epochs))
        return self.lr


@dataclass
class EpochStats:
    epoch: int
    task_loss: float
    orth_loss: float
    total_loss: float
    dev_eer: float = float("nan")
    step_losses: list[float] = field(default_factory=list)

    def log_line(self) -> str:
        return (
            f"{self.epoch}\t{self.task_loss:.6f}\t{self.orth_loss:.6f}\t"
            f"{self.total_loss:.6f}\t{self.dev_eer:.6f}"
        )


def orth_value(model: TORawNet) -> float:
    """Unweighted regularizer value, for logging whatever lambda is."""
    with no_grad():
        return float(sum(orth_loss(k, model.cfg.orth()).item() for k in model.regularized_kernels()))


def _clip(params: Sequence[tuple[str, Tensor]], max_norm: float) -> None:
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for _, p in params))
    if norm > max_norm:
        for _, p in params:
            p.grad *= max_norm / norm


def prepare_batch(waves: np.ndarray, plan: RunPlan, rng: np.random.Generator) -> np.ndarray:
    if not plan.augment.enable and not plan.random_crop:
        return waves
    out = np.empty_like(waves)
    T = waves.shape[1]
    for i, w in enumerate(waves):
        if plan.random_crop:
            w = fix_length(w, T, offset=int(rng.integers(T)))
        out[i] = rawboost_augment(w, plan.augment, rng) if plan.augment.enable else w
    return out


def train_epoch(model: TORawNet, train: Split, plan: RunPlan, optim: OptimState,
                rng: np.random.Generator, epoch: int = 1) -> EpochStats:
    """One shuffled pass: forward, total loss, backward, Adam, per batch."""
    if len(train) == 0:
        raise ValueError("empty training set")
    model.train()
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    cfg = model.cfg
    orth_cfg = cfg.orth()
    lr = plan.lr_at(epoch)
    sums = np.zeros(3)
    count = 0
    steps = []
    for idx in iterate_batches(len(train), plan.batch_size, rng):
        x = prepare_batch(train.waveforms[idx], plan, rng)
        model.zero_grad()
        logits = model(Tensor(x[:, None, :]))
        task = task_loss(logits, train.labels[idx], cfg.class_weights)
        kernels = model.regularized_kernels()
        loss = total_loss(task, kernels, orth_cfg)
        if orth_cfg.lam:
            reg = (loss.item() - task.item()) / orth_cfg.lam
        else:
            reg = orth_value(model)
        if not math.isfinite(loss.item()):
            raise NumericalError(f"epoch {epoch}: non-finite loss {loss.item()}")
        loss.backward(retain_graph=False)
        if plan.grad_clip > 0:
            _clip(params, plan.grad_clip)
        adam_step(params, optim, lr)
        n = len(idx)
        sums += n * np.array([task.item(), reg, loss.item()])
        count += n
        steps.append(loss.item())
        del logits, task, loss, kernels
    mean = sums / count
    return EpochStats(epoch, mean[0], mean[1], mean[2], step_losses=steps)


def predict_scores(model: TORawNet, waves: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Detection scores in eval mode; restores the previous mode afterwards."""
    was_training = model.training
    model.eval()
    out = []
    try:
        with no_grad():
            for start in range(0, len(waves), batch_size):
                logits = model(Tensor(waves[start : start + batch_size, None, :]))
                out.append(detection_scores(logits))
    finally:
        model.train(was_training)
    return np.concatenate(out)


def split_eer(scores: np.ndarray, split: Split) -> float:
    labels = split.labels
    return eer_from_arrays(scores[labels == 1], scores[labels == 0])[0]


def select_best(history: Sequence[tuple[int, float]]) -> int:
    """Epoch with the lowest dev EER; the earliest epoch wins ties."""
    scored = [(eer, epoch) for epoch, eer in history if eer is not None and not math.isnan(eer)]
    if not scored:
        raise ValueError("no evaluated checkpoint to select from")
    best_eer = min(e for e, _ in scored)
    return min(epoch for e, epoch in scored if e == best_eer)


def multi_seed_report(eers: Sequence[float]) -> str:
    """'mean (best)' with two decimals."""
    if len(eers) == 0:
        raise ValueError("no completed runs to report")
    return f"{float(np.mean(eers)):.2f} ({float(np.min(eers)):.2f})"


@dataclass
class RunResult:
    seed: int
    config: dict
    history: list[EpochStats]
    best_epoch: int
    dev_eer: float
    eval_eer: float | None
    sinc_offdiag: float
    seconds: float
    checkpoint: str | None = None

    @property
    def step_losses(self) -> list[float]:
        return [l for h in self.history for l in h.step_losses]


def train_run(model_cfg: ModelConfig, plan: RunPlan, train: Split, dev: Split, evaluation: Split | None = None,
              out_dir=None, log_stream: TextIO | None = None,
              epoch_callback: Callable[[EpochStats], None] | None = None) -> RunResult:
    """Train one seed, keep the dev-selected weights and score the eval split.

    When ``out_dir`` is given it receives ``train.log``, ``best.ckpt``,
    ``last.ckpt`` and, with an eval split, ``eval_scores.txt``.
    """
    start = time.perf_counter()
    model = TORawNet(model_cfg)
    rng = np.random.default_rng([model_cfg.seed, 17])
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    optim = OptimState.create(params, lr=plan.lr, weight_decay=plan.weight_decay)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log_fh = open(out / "train.log", "w", encoding="utf-8") if out is not None else None

    history: list[EpochStats] = []
    best_state = None
    best_optim = ({}, 0)
    best = (math.inf, 0)
    try:
        for epoch in range(1, plan.epochs + 1):
            stats = train_epoch(model, train, plan, optim, rng, epoch)
            if epoch % plan.eval_every == 0 or epoch == plan.epochs:
                stats.dev_eer = split_eer(predict_scores(model, dev.waveforms, plan.batch_size), dev)
                if stats.dev_eer < best[0]:
                    best = (stats.dev_eer, epoch)
                    best_state = model.state_dict()
                    best_optim = (optimizer_tensors(optim), optim.step)
            history.append(stats)
            line = stats.log_line()
            log.info("%s %s", model_cfg.name, line)
            for fh in (log_fh, log_stream):
                if fh is not None:
                    fh.write(line + "\n")
                    fh.flush()
            if epoch_callback is not None:
                epoch_callback(stats)
        if out is not None:
            save_checkpoint(out / "last.ckpt", Checkpoint(
                model_cfg.to_dict(), {**model.state_dict(), **optimizer_tensors(optim)}, plan.epochs,
                {"optim_step": optim.step, "lr": plan.lr}))
    finally:
        if log_fh is not None:
            log_fh.close()

    best_epoch = select_best([(h.epoch, h.dev_eer) for h in history])
    assert best_epoch == best[1]
    model.load_state_dict(best_state)
    ckpt_path = None
    if out is not None:
        ckpt_path = str(out / "best.ckpt")
        save_checkpoint(ckpt_path, Checkpoint(
            model_cfg.to_dict(), {**best_state, **best_optim[0]}, best_epoch,
            {"dev_eer": best[0], "optim_step": best_optim[1], "lr": plan.lr}))
    eval_eer = None
    if evaluation is not None:
        scores = predict_scores(model, evaluation.waveforms, plan.batch_size)
        eval_eer = split_eer(scores, evaluation)
        if out is not None:
            write_scores(out / "eval_scores.txt", [ScoreRecord(u, s) for u, s in zip(evaluation.ids, scores)])
    with no_grad():
        offdiag = off_diagonal_mass(model.sinc.kernel().data)
    return RunResult(
        model_cfg.seed, model_cfg.to_dict(), history, best_epoch, best[0], eval_eer, offdiag,
        time.perf_counter() - start, ckpt_path,
    )
