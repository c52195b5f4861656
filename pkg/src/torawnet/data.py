"""WAV I/O, length conditioning, protocols, augmentation and the synthetic corpus."""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

SAMPLE_RATE = 16000
DEFAULT_LENGTH = 64600
LABELS = ("bonafide", "spoof")
SUBSETS = ("train", "dev", "eval")


class DataError(ValueError):
    """Malformed or mismatched input data."""


# ---------------------------------------------------------------------------
# waveforms
# ---------------------------------------------------------------------------


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"waveform must be 1-d, got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise DataError(f"expected {SAMPLE_RATE} Hz audio, got {self.sample_rate} Hz")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform has non-finite samples")

    def __len__(self) -> int:
        return self.samples.size


def load_wav(path) -> Waveform:
    """Read PCM16 mono 16 kHz; samples are scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            comp = fh.getcomptype()
            frames = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from None
    if comp != "NONE":
        raise DataError(f"{path}: expected uncompressed PCM, got codec {comp}")
    if channels != 1:
        raise DataError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise DataError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    if rate != SAMPLE_RATE:
        raise DataError(f"{path}: expected sample rate {SAMPLE_RATE}, got {rate}")
    pcm = np.frombuffer(frames, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def wav_bytes(samples: np.ndarray, sample_rate: int = SAMPLE_RATE, channels: int = 1) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(to_pcm16(samples).tobytes())
    return buf.getvalue()


def save_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    Path(path).write_bytes(wav_bytes(samples, sample_rate))


def fix_length(w: Waveform | np.ndarray, target: int = DEFAULT_LENGTH, offset: int = 0) -> np.ndarray:
    """First ``target`` samples, tiling short utterances end to end.

    ``offset`` shifts the window start (random cropping); it is taken modulo
    the tiled signal so any value is valid.
    """
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if x.size == 0:
        raise DataError("cannot fix the length of an empty waveform")
    if target < 1:
        raise ValueError("target length must be positive")
    if offset == 0 and x.size >= target:
        return x[:target].copy()
    reps = -(-(target + offset) // x.size)
    return np.tile(x, reps)[offset : offset + target]


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolEntry:
    speaker_id: str
    utterance_id: str
    attack_id: str
    label: str
    subset: str = "train"

    @property
    def target(self) -> int:
        return 1 if self.label == "bonafide" else 0


def parse_protocol(stream: TextIO | Iterable[str], subset: str = "train") -> list[ProtocolEntry]:
    """Lines of ``speaker utterance ignored attack key``; blank lines skipped."""
    if subset not in SUBSETS:
        raise DataError(f"unknown subset {subset!r}")
    entries = []
    seen = set()
    for lineno, line in enumerate(stream, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise DataError(f"protocol line {lineno}: expected 5 fields, got {len(parts)}")
        speaker, utt, _, attack, key = parts
        if key not in LABELS:
            raise DataError(f"protocol line {lineno}: unknown key {key!r}")
        if utt in seen:
            raise DataError(f"protocol line {lineno}: duplicate utterance {utt}")
        seen.add(utt)
        entries.append(ProtocolEntry(speaker, utt, attack, key, subset))
    return entries


def serialize_protocol(entries: Sequence[ProtocolEntry]) -> str:
    return "".join(f"{e.speaker_id} {e.utterance_id} - {e.attack_id} {e.label}\n" for e in entries)


def read_protocol(path, subset: str) -> list[ProtocolEntry]:
    with open(path, encoding="utf-8") as fh:
        return parse_protocol(fh, subset)


def wav_path(root, subset: str, utterance_id: str) -> Path:
    return Path(root) / subset / "wav" / f"{utterance_id}.wav"


def protocol_path(root, subset: str) -> Path:
    return Path(root) / "protocols" / f"{subset}.txt"


@dataclass
class Split:
    """One subset held in memory as fixed-length waveforms."""

    entries: list[ProtocolEntry]
    waveforms: np.ndarray  # (N, T)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.target for e in self.entries], dtype=int)

    @property
    def ids(self) -> list[str]:
        return [e.utterance_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def load_split(root, subset: str, length: int) -> Split:
    entries = read_protocol(protocol_path(root, subset), subset)
    if not entries:
        raise DataError(f"{protocol_path(root, subset)}: no entries")
    waves = np.stack([fix_length(load_wav(wav_path(root, subset, e.utterance_id)), length) for e in entries])
    return Split(entries, waves)


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator | None) -> Iterator[np.ndarray]:
    """Index batches over a fresh permutation (or in order when ``rng`` is None)."""
    if n < 1:
        raise DataError("empty dataset")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    enable: bool = False
    fir_taps: int = 33
    n_bands: int = 5
    notch_db: tuple[float, float] = (0.0, 20.0)
    max_alpha: float = 0.3
    snr_range_db: tuple[float, float] = (10.0, 40.0)
    p_impulse: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.p_impulse <= 1.0:
            raise ValueError("p_impulse must lie in [0, 1]")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ValueError("snr_range_db must be (min, max)")
        if self.fir_taps < 1 or self.fir_taps % 2 == 0:
            raise ValueError("fir_taps must be a positive odd count")
        if self.n_bands < 0 or self.max_alpha < 0:
            raise ValueError("n_bands and max_alpha must be non-negative")


def random_fir(cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Linear-phase FIR whose magnitude has ``n_bands`` random notches.

    With no bands the filter is a unit impulse.
    """
    h = np.zeros(cfg.fir_taps)
    h[cfg.fir_taps // 2] = 1.0
    if cfg.n_bands == 0:
        return h
    n_fft = 512
    freqs = np.linspace(0.0, 1.0, n_fft // 2 + 1)
    mag = np.ones_like(freqs)
    for _ in range(cfg.n_bands):
        center = rng.uniform(0.02, 0.98)
        width = rng.uniform(0.01, 0.1)
        depth = 10 ** (-rng.uniform(*cfg.notch_db) / 20)
        mag *= 1 - (1 - depth) * np.exp(-0.5 * ((freqs - center) / width) ** 2)
    impulse = np.fft.irfft(mag, n_fft)
    impulse = np.roll(impulse, cfg.fir_taps // 2)[: cfg.fir_taps] * np.hamming(cfg.fir_taps)
    return impulse / impulse.sum()


def rawboost_augment(w: Waveform | np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Convolutive (linear, then cubic) noise and signal-dependent impulses."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if not cfg.enable:
        return x.copy()
    y = np.convolve(x, random_fir(cfg, rng), mode="same")
    alpha = rng.uniform(0.0, cfg.max_alpha) if cfg.max_alpha > 0 else 0.0
    y = np.convolve(y + alpha * y**3, random_fir(cfg, rng), mode="same")
    if cfg.p_impulse > 0:
        snr = rng.uniform(*cfg.snr_range_db)
        eta = np.sqrt(10 ** (-snr / 10) / cfg.p_impulse)
        hits = rng.random(y.size) < cfg.p_impulse
        signs = rng.choice([-1.0, 1.0], size=y.size)
        y = y + hits * eta * np.abs(y) * signs
    peak = np.max(np.abs(y)) if y.size else 0.0
    if peak > 1.0:
        y = y / peak
    return y


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


def pinkish_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size)
    spec[1:] /= np.sqrt(f[1:])
    spec[0] = 0
    x = np.fft.irfft(spec, n)
    return x / (np.std(x) + 1e-12)


def synth_bonafide(n: int, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """3-5 harmonics of a random fundamental plus pink-ish noise at 20 dB SNR."""
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(80.0, 400.0)
    x = np.zeros(n)
    for k in range(1, rng.integers(3, 6) + 1):
        x += rng.uniform(0.2, 1.0) / k * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    noise = pinkish_noise(n, rng) * np.std(x) * 10 ** (-20 / 20)
    x = x + noise
    return x / np.max(np.abs(x)) * rng.uniform(0.3, 0.8)


def spoofify(x: np.ndarray, rng: np.random.Generator, bits: int = 4, frame: int = 256) -> np.ndarray:
    """4-bit amplitude quantization, then per-frame random phase perturbation."""
    peak = np.max(np.abs(x))
    levels = 2 ** (bits - 1) - 0.5
    y = np.round(x / peak * levels) / levels * peak
    out = y.copy()
    for start in range(0, y.size - frame + 1, frame):
        spec = np.fft.rfft(y[start : start + frame])
        spec *= np.exp(1j * rng.uniform(-np.pi / 2, np.pi / 2, spec.size))
        out[start : start + frame] = np.fft.irfft(spec, frame)
    m = np.max(np.abs(out))
    if m > 0.99:
        out *= 0.99 / m
    return out


def split_counts(n_per_class: int, fractions=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    """Utterances per subset, in whole bona fide / spoof pairs."""
    if n_per_class < 3:
        raise ValueError("need at least 3 utterances per class to fill train, dev and eval")
    dev = max(1, int(round(n_per_class * fractions[1])))
    ev = max(1, int(round(n_per_class * fractions[2])))
    return 2 * (n_per_class - dev - ev), 2 * dev, 2 * ev


def gen_synthetic(n_per_class: int, seed: int, out_dir, length: int = 16000,
                  counts: tuple[int, int, int] | None = None) -> dict[str, list[ProtocolEntry]]:
    """Write a bona fide / spoof corpus and return the per-subset protocols.

    Each spoof utterance is the processed twin of a bona fide one.  ``counts``
    gives utterances per subset (even numbers, half of each class); by default
    the 2*n_per_class utterances are split 60/20/20.
    """
    total = 2 * n_per_class
    counts = tuple(counts) if counts is not None else split_counts(n_per_class)
    if sum(counts) != total or any(c < 0 for c in counts):
        raise ValueError(f"subset counts {counts} do not partition {total} utterances")
    root = Path(out_dir)
    try:
        for subset in SUBSETS:
            (root / subset / "wav").mkdir(parents=True, exist_ok=True)
        (root / "protocols").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot write corpus under {root}: {exc}") from None

    # interleave twins so that every subset sees both classes
    items = []
    for i in range(n_per_class):
        items.append((i, "bonafide"))
        items.append((i, "spoof"))
    order = np.random.default_rng([seed, 0]).permutation(total)
    items = [items[k] for k in order]
    # keep each subset class-balanced where the counts allow
    bona = [it for it in items if it[1] == "bonafide"]
    spoof = [it for it in items if it[1] == "spoof"]

    protocols = {}
    cursor_b = cursor_s = 0
    for subset, count in zip(SUBSETS, counts):
        n_b = min(count // 2 + count % 2, len(bona) - cursor_b)
        n_s = count - n_b
        chosen = bona[cursor_b : cursor_b + n_b] + spoof[cursor_s : cursor_s + n_s]
        cursor_b += n_b
        cursor_s += n_s
        chosen.sort(key=lambda it: (it[0], it[1]))
        entries = []
        for idx, label in chosen:
            utt = f"SYN_{subset[0].upper()}_{idx:05d}{'B' if label == 'bonafide' else 'S'}"
            rng = np.random.default_rng([seed, 1, idx])
            x = synth_bonafide(length, rng)
            if label == "spoof":
                x = spoofify(x, np.random.default_rng([seed, 2, idx]))
            save_wav(wav_path(root, subset, utt), x)
            entries.append(ProtocolEntry(f"SPK{idx % 10:02d}", utt, "-" if label == "bonafide" else "Q4", label, subset))
        protocol_path(root, subset).write_text(serialize_protocol(entries), encoding="utf-8", newline="\n")
        protocols[subset] = entries
    return protocols
