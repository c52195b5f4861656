"""key=value run configuration with documented defaults."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .data import AugmentConfig
from .model import ModelConfig
from .training import RunPlan


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.replace(",", " ").split())


def _profile(text: str) -> str:
    if text not in ("S", "M", "L"):
        raise ConfigError(f"profile must be S, M or L, got {text!r}")
    return text


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str


KEYS: dict[str, Key] = {
    "data_root": Key(str, "data", "corpus root with <subset>/wav and protocols/"),
    "out_dir": Key(str, "runs", "where checkpoints, logs and reports go"),
    "profile": Key(_profile, "S", "channel profile S|M|L"),
    "lambda": Key(float, 0.1, "orthogonality weight"),
    "use_orth": Key(_bool, True, "apply the orthogonality penalty"),
    "use_tcn": Key(_bool, True, "dilated residual blocks (false: dilation 1 everywhere)"),
    "epochs": Key(int, 15, "training epochs"),
    "batch_size": Key(int, 32, "utterances per step"),
    "lr": Key(float, 5e-5, "Adam learning rate"),
    "lr_schedule": Key(str, "constant", "constant|cosine"),
    "weight_decay": Key(float, 0.0, "L2 added to gradients"),
    "grad_clip": Key(float, 0.0, "global gradient norm clip, 0 = off"),
    "seeds": Key(_ints, (0, 1, 2), "comma-separated run seeds"),
    "input_samples": Key(int, 16000, "fixed input length in samples"),
    "gru_hidden": Key(int, 1024, "GRU state size"),
    "n_filters": Key(int, 128, "Sinc filters"),
    "filter_length": Key(int, 129, "Sinc filter taps (odd)"),
    "kernel_size": Key(int, 3, "dilated convolution width"),
    "max_dilation": Key(int, 32, "largest dilation of the doubling schedule"),
    "pool_factor": Key(int, 3, "max-pool factor after each residual block"),
    "sinc_unit_norm": Key(_bool, True, "rescale each Sinc filter to unit L2 norm"),
    "freeze_sinc": Key(_bool, False, "keep the Sinc cutoffs at their initial values"),
    "orth_norm": Key(str, "squared", "squared|plain Frobenius penalty"),
    "orth_stride": Key(int, 1, "stride of the self-convolution"),
    "orth_targets": Key(_strs, ("sinc",), "kernels to regularize: sinc, tcn"),
    "eval_every": Key(int, 1, "dev evaluation interval in epochs"),
    "random_crop": Key(_bool, False, "random window start instead of the first samples"),
    "augment": Key(_bool, False, "enable waveform augmentation"),
    "augment_fir_taps": Key(int, 33, "augmentation FIR length (odd)"),
    "augment_n_bands": Key(int, 5, "notches per augmentation FIR"),
    "augment_max_alpha": Key(float, 0.3, "upper bound of the cubic distortion weight"),
    "augment_snr_min": Key(float, 10.0, "impulsive noise SNR lower bound (dB)"),
    "augment_snr_max": Key(float, 40.0, "impulsive noise SNR upper bound (dB)"),
    "augment_p_impulse": Key(float, 0.01, "per-sample impulse probability"),
    "checkpoint": Key(str, "", "checkpoint to evaluate or score with"),
}


def defaults() -> dict[str, Any]:
    return {k: v.default for k, v in KEYS.items()}


def parse_value(key: str, text: str) -> Any:
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KEYS[key].parse(text.strip())
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path) -> dict[str, Any]:
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def dump_config(values: dict[str, Any]) -> str:
    return "".join(f"{k}={format_value(values[k])}\n" for k in KEYS if k in values)


def model_config(values: dict[str, Any], seed: int) -> ModelConfig:
    return ModelConfig(
        profile=values["profile"],
        lam=values["lambda"],
        use_orth=values["use_orth"],
        use_tcn=values["use_tcn"],
        gru_hidden=values["gru_hidden"],
        n_filters=values["n_filters"],
        filter_length=values["filter_length"],
        kernel_size=values["kernel_size"],
        max_dilation=values["max_dilation"],
        pool_factor=values["pool_factor"],
        sinc_unit_norm=values["sinc_unit_norm"],
        freeze_sinc=values["freeze_sinc"],
        orth_stride=values["orth_stride"],
        orth_norm=values["orth_norm"],
        orth_targets=values["orth_targets"],
        input_samples=values["input_samples"],
        seed=seed,
    )


def run_plan(values: dict[str, Any]) -> RunPlan:
    return RunPlan(
        epochs=values["epochs"],
        batch_size=values["batch_size"],
        seeds=values["seeds"],
        lr=values["lr"],
        lr_schedule=values["lr_schedule"],
        weight_decay=values["weight_decay"],
        grad_clip=values["grad_clip"],
        eval_every=values["eval_every"],
        random_crop=values["random_crop"],
        augment=AugmentConfig(
            enable=values["augment"],
            fir_taps=values["augment_fir_taps"],
            n_bands=values["augment_n_bands"],
            max_alpha=values["augment_max_alpha"],
            snr_range_db=(values["augment_snr_min"], values["augment_snr_max"]),
            p_impulse=values["augment_p_impulse"],
        ),
    )
