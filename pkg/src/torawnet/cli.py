"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (non-finite values, gradient check over tolerance).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import KEYS, ConfigError, defaults, dump_config, load_config, model_config, parse_value, run_plan
from .data import SUBSETS, DataError, fix_length, gen_synthetic, load_split, load_wav, protocol_path
from .gradcheck import TOLERANCE, run_suite
from .metrics import ScoreRecord, det_points, eer_from_arrays, format_report, write_scores
from .model import load_checkpoint, model_from_checkpoint
from .sinc import init_linear_scale, magnitude_response
from .tensor import no_grad
from .training import multi_seed_report, predict_scores, train_run

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("gen-data", "train", "eval", "score", "grad-check", "inspect-filters")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser, keys: Sequence[str]) -> None:
    p.add_argument("--config", help="key=value file; flags given here override it")
    for key in keys:
        spec = KEYS[key]
        p.add_argument(
            "--" + key.replace("_", "-"),
            dest=key,
            default=None,
            metavar=key.upper(),
            help=f"{spec.doc} (default: {spec.default})",
        )


def resolve(args: argparse.Namespace, keys: Sequence[str]) -> dict:
    """Defaults, then the config file, then explicit flags."""
    values = defaults()
    if getattr(args, "config", None):
        try:
            values.update(load_config(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    for key in keys:
        text = getattr(args, key, None)
        if text is not None:
            values[key] = parse_value(key, text)
    return values


def write_meta(out_dir, command: str, values: dict) -> None:
    """``run.meta`` is itself a valid ``--config`` file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = f"# command: {command}\n# version: {__version__}\n"
    (out / "run.meta").write_text(header + dump_config(values), encoding="utf-8", newline="\n")


TRAIN_KEYS = [k for k in KEYS if k != "checkpoint"]
EVAL_KEYS = ["checkpoint", "data_root", "out_dir", "batch_size", "input_samples"]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="torawnet", description="Raw-waveform spoofing detector with an orthogonal Sinc front end.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic bona fide / spoof corpus")
    p.add_argument("--out", required=True, help="corpus root directory")
    p.add_argument("--n", type=int, default=160, help="utterances per class (default: 160)")
    p.add_argument("--seed", type=int, default=0, help="corpus seed (default: 0)")
    p.add_argument("--length", type=int, default=16000, help="samples per utterance (default: 16000)")
    p.add_argument("--split", default=None,
                   help="train,dev,eval utterance counts summing to 2*N (default: 60/20/20 fractions)")

    p = sub.add_parser("train", help="train one model per seed and report the eval EER")
    _add_config_flags(p, TRAIN_KEYS)

    p = sub.add_parser("eval", help="EER report for a checkpoint on a labelled subset")
    _add_config_flags(p, EVAL_KEYS)
    p.add_argument("--subset", default="eval", choices=SUBSETS, help="subset to evaluate (default: eval)")

    p = sub.add_parser("score", help="score every WAV in a directory")
    _add_config_flags(p, ["checkpoint", "out_dir", "batch_size", "input_samples"])
    p.add_argument("--wav-dir", required=True, help="directory of 16 kHz mono PCM16 WAV files")

    p = sub.add_parser("grad-check", help="finite-difference check of every differentiable op")
    p.add_argument("--points", type=int, default=10, help="random points per op (default: 10)")
    p.add_argument("--seed", type=int, default=0, help="seed for the random points (default: 0)")
    p.add_argument("--out", default=".", help="directory for run.meta (default: .)")

    p = sub.add_parser("inspect-filters", help="dump Sinc filter cutoffs and magnitude responses as CSV")
    p.add_argument("--checkpoint", default=None, help="checkpoint (default: the untrained initialization)")
    p.add_argument("--out", default=".", help="directory for filters.csv, responses.csv and run.meta (default: .)")
    p.add_argument("--n-fft", type=int, default=512, help="DFT size of the magnitude responses (default: 512)")
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    counts = None
    if args.split:
        try:
            counts = tuple(int(c) for c in args.split.split(","))
        except ValueError:
            raise UsageError(f"--split expects three integers, got {args.split!r}") from None
        if len(counts) != 3:
            raise UsageError("--split expects three comma-separated counts")
    try:
        protocols = gen_synthetic(args.n, args.seed, args.out, args.length, counts)
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from None
    meta = {"seeds": (args.seed,), "data_root": args.out, "input_samples": args.length}
    header = f"# command: gen-data\n# version: {__version__}\n# n_per_class: {args.n}\n"
    header += f"# split: {','.join(str(len(protocols[s])) for s in SUBSETS)}\n"
    (Path(args.out) / "run.meta").write_text(header + dump_config(meta), encoding="utf-8", newline="\n")
    for subset in SUBSETS:
        print(f"{subset}\t{len(protocols[subset])}")
    return EXIT_OK


def cmd_train(args) -> int:
    values = resolve(args, TRAIN_KEYS)
    plan = run_plan(values)
    root = values["data_root"]
    T = values["input_samples"]
    train = load_split(root, "train", T)
    dev = load_split(root, "dev", T)
    evaluation = load_split(root, "eval", T) if protocol_path(root, "eval").exists() else None
    out = Path(values["out_dir"])
    write_meta(out, "train", values)
    results = []
    for seed in plan.seeds:
        cfg = model_config(values, seed)
        print(f"# {cfg.name} seed {seed}")
        print("epoch\ttask_loss\torth_loss\ttotal_loss\tdev_eer")
        result = train_run(cfg, plan, train, dev, evaluation, out / f"seed{seed}", sys.stdout)
        results.append(result)
        print(f"# seed {seed}: best epoch {result.best_epoch}, dev EER {result.dev_eer:.6f}"
              + (f", eval EER {result.eval_eer:.6f}" if result.eval_eer is not None else ""))
    lines = {"model": model_config(values, 0).name}
    for r in results:
        lines[f"seed{r.seed}_best_epoch"] = r.best_epoch
        lines[f"seed{r.seed}_dev_eer"] = r.dev_eer
        if r.eval_eer is not None:
            lines[f"seed{r.seed}_eval_eer"] = r.eval_eer
    if evaluation is not None:
        lines["eval_eer_percent"] = multi_seed_report([100 * r.eval_eer for r in results])
    report = format_report(lines)
    (out / "report.tsv").write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_OK


def _load_model(values):
    if not values["checkpoint"]:
        raise UsageError("--checkpoint is required")
    try:
        ckpt = load_checkpoint(values["checkpoint"])
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return model_from_checkpoint(ckpt)


def cmd_eval(args) -> int:
    values = resolve(args, EVAL_KEYS)
    model = _load_model(values)
    T = model.cfg.input_samples if args.input_samples is None else values["input_samples"]
    split = load_split(values["data_root"], args.subset, T)
    scores = predict_scores(model, split.waveforms, values["batch_size"])
    labels = split.labels
    if labels.min() == labels.max():
        raise DataError(f"{args.subset} protocol has a single class; EER is undefined")
    eer, thr = eer_from_arrays(scores[labels == 1], scores[labels == 0])
    out = Path(values["out_dir"])
    write_meta(out, "eval", values)
    write_scores(out / f"{args.subset}_scores.txt", [ScoreRecord(u, s) for u, s in zip(split.ids, scores)])
    det = det_points(scores[labels == 1], scores[labels == 0])
    np.savetxt(out / f"{args.subset}_det.csv", det, delimiter=",", header="threshold,far,frr", comments="", fmt="%.6f")
    report = format_report({"subset": args.subset, "n_utterances": len(split), "eer": eer, "threshold": thr})
    (out / f"{args.subset}_report.tsv").write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_OK


def cmd_score(args) -> int:
    values = resolve(args, ["checkpoint", "out_dir", "batch_size", "input_samples"])
    model = _load_model(values)
    T = model.cfg.input_samples if args.input_samples is None else values["input_samples"]
    paths = sorted(Path(args.wav_dir).glob("*.wav"))
    if not paths:
        raise DataError(f"no .wav files in {args.wav_dir}")
    waves = np.stack([fix_length(load_wav(p), T) for p in paths])
    scores = predict_scores(model, waves, values["batch_size"])
    out = Path(values["out_dir"])
    write_meta(out, "score", values)
    write_scores(out / "scores.txt", [ScoreRecord(p.stem, s) for p, s in zip(paths, scores)])
    print(f"scored {len(paths)} files -> {out / 'scores.txt'}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if args.points < 1:
        raise UsageError("--points must be at least 1")
    results = run_suite(args.points, args.seed)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "run.meta").write_text(
        f"# command: grad-check\n# version: {__version__}\n# points: {args.points}\nseeds={args.seed}\n",
        encoding="utf-8",
    )
    failed = [k for k, v in results.items() if not v < TOLERANCE]
    for name, err in results.items():
        print(f"{name}\t{err:.3e}\t{'ok' if err < TOLERANCE else 'FAIL'}")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_inspect_filters(args) -> int:
    if args.checkpoint:
        model = _load_model({"checkpoint": args.checkpoint})
        fb = model.sinc
    else:
        fb = init_linear_scale(unit_norm=True)
    f1, f2 = fb.cutoffs_hz()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["filter_index,f_low_hz,f_high_hz"]
    rows += [f"{i},{a:.6f},{b:.6f}" for i, (a, b) in enumerate(zip(f1, f2))]
    (out / "filters.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    with no_grad():
        freqs, mags = magnitude_response(fb.kernel().data, fb.sample_rate, args.n_fft)
    with open(out / "responses.csv", "w", encoding="utf-8") as fh:
        fh.write("filter_index,bin_hz,magnitude\n")
        for i, row in enumerate(mags):
            fh.writelines(f"{i},{f:.6f},{m:.6e}\n" for f, m in zip(freqs, row))
    (out / "run.meta").write_text(
        f"# command: inspect-filters\n# version: {__version__}\n"
        + (f"checkpoint={args.checkpoint}\n" if args.checkpoint else ""),
        encoding="utf-8",
    )
    print(f"{len(f1)} filters -> {out / 'filters.csv'}, {out / 'responses.csv'}")
    return EXIT_OK


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "grad-check": cmd_grad_check,
    "inspect-filters": cmd_inspect_filters,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        return HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch())
