"""End to end on a toy scale: corpus, training, scoring, EER, filter dump.

Uses a deliberately tiny network (8 Sinc filters, 2000-sample inputs) so it
finishes in a minute or two on one core.  Output goes to a temporary directory.

Run: python3 demos/tiny_pipeline.py
"""

import tempfile
from pathlib import Path

from torawnet.cli import dispatch

TINY = ["--input-samples", "2000", "--n-filters", "8", "--filter-length", "33", "--max-dilation", "4",
        "--pool-factor", "2", "--gru-hidden", "16", "--batch-size", "8", "--lr", "1e-3"]

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    corpus, runs = root / "corpus", root / "runs"
    dispatch(["gen-data", "--out", str(corpus), "--n", "40", "--length", "2000", "--seed", "1"])
    print((corpus / "protocols" / "train.txt").read_text().splitlines()[0], "...")

    dispatch(["train", "--data-root", str(corpus), "--out-dir", str(runs), "--epochs", "6", "--seeds", "0", *TINY])

    ckpt = runs / "seed0" / "best.ckpt"
    dispatch(["eval", "--checkpoint", str(ckpt), "--data-root", str(corpus), "--subset", "eval",
              "--out-dir", str(root / "eval")])
    print("first scores:", *(root / "eval" / "eval_scores.txt").read_text().splitlines()[:3], sep="\n  ")

    dispatch(["inspect-filters", "--checkpoint", str(ckpt), "--out", str(root / "filters")])
    print((root / "filters" / "filters.csv").read_text())
