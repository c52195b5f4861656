"""Equal error rate and score files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class ScoreRecord:
    utterance_id: str
    score: float
    label: str | None = None  # "bonafide" | "spoof"

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"{self.utterance_id}: non-finite score {self.score}")


def _split(records: Sequence[ScoreRecord]) -> tuple[np.ndarray, np.ndarray]:
    bona = np.array([r.score for r in records if r.label == "bonafide"], dtype=float)
    spoof = np.array([r.score for r in records if r.label == "spoof"], dtype=float)
    return bona, spoof


def error_rates(bona: np.ndarray, spoof: np.ndarray, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """FAR(t) = P(spoof score >= t), FRR(t) = P(bona fide score < t)."""
    bona_sorted = np.sort(bona)
    spoof_sorted = np.sort(spoof)
    frr = np.searchsorted(bona_sorted, thresholds, side="left") / bona.size
    far = (spoof.size - np.searchsorted(spoof_sorted, thresholds, side="left")) / spoof.size
    return far, frr


def eer_from_arrays(bona, spoof) -> tuple[float, float]:
    """EER and threshold from bona fide and spoof score arrays.

    Thresholds are swept over every distinct score.  FAR - FRR is
    non-increasing along the sweep; where it changes sign between two adjacent
    thresholds both curves are linearly interpolated to their crossing.
    """
    bona = np.asarray(bona, dtype=float)
    spoof = np.asarray(spoof, dtype=float)
    if bona.size == 0 or spoof.size == 0:
        raise ValueError("EER needs at least one bona fide and one spoof score")
    thresholds = np.unique(np.concatenate([bona, spoof]))
    far, frr = error_rates(bona, spoof, thresholds)
    diff = far - frr
    hit = np.flatnonzero(diff == 0)
    if hit.size:
        i = hit[0]
        return float(far[i]), float(thresholds[i])
    # diff starts at FAR(min) - 0 = 1 > 0 and is non-increasing
    j = np.flatnonzero(diff < 0)
    if j.size == 0:
        # never crosses: FRR stays 0 while FAR > 0 only if all spoof >= max score
        i = len(thresholds) - 1
        return float((far[i] + frr[i]) / 2), float(thresholds[i])
    j = j[0]
    i = j - 1
    w = diff[i] / (diff[i] - diff[j])
    eer = far[i] + w * (far[j] - far[i])
    thr = thresholds[i] + w * (thresholds[j] - thresholds[i])
    return float(eer), float(thr)


def compute_eer(records: Sequence[ScoreRecord]) -> tuple[float, float]:
    """(EER as a fraction, threshold) over labelled score records."""
    bona, spoof = _split(records)
    if bona.size == 0 or spoof.size == 0:
        raise ValueError("EER needs at least one bona fide and one spoof record")
    return eer_from_arrays(bona, spoof)


def det_points(bona, spoof) -> np.ndarray:
    """(threshold, FAR, FRR) rows over every distinct score, for DET/CSV export."""
    bona = np.asarray(bona, dtype=float)
    spoof = np.asarray(spoof, dtype=float)
    thresholds = np.unique(np.concatenate([bona, spoof]))
    far, frr = error_rates(bona, spoof, thresholds)
    return np.column_stack([thresholds, far, frr])


def write_scores(path, records: Iterable[ScoreRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.utterance_id} {r.score:.6f}\n")


def read_scores(path) -> list[ScoreRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'utterance_id score', got {line!r}")
        try:
            score = float(parts[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: score {parts[1]!r} is not a number") from None
        records.append(ScoreRecord(parts[0], score))
    return records


def attach_labels(records: Sequence[ScoreRecord], labels: dict[str, str]) -> list[ScoreRecord]:
    missing = [r.utterance_id for r in records if r.utterance_id not in labels]
    if missing:
        raise KeyError(f"no label for {len(missing)} utterances, e.g. {missing[0]}")
    return [ScoreRecord(r.utterance_id, r.score, labels[r.utterance_id]) for r in records]


def format_report(metrics: dict[str, float]) -> str:
    return "".join(f"{k}\t{v:.6f}\n" if isinstance(v, float) else f"{k}\t{v}\n" for k, v in metrics.items())
