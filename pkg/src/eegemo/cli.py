"""Command-line entry point: ``eegemo <command> ...`` or ``python -m eegemo``.

Exit codes: 0 success, 1 I/O failure, 2 validation or format error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_synth_spec, read_text
from .data_model import LabelDim, FeatureDataset
from .dsp import extract_features, to_sequences, zscore_apply
from .errors import ConfigError, EmoError, IoError, ShapeError
from .featfile import read_feat, write_feat
from .gradcheck import run_gradcheck
from .ingest import SynthSpec, read_eegb, read_npy_pair, synth_generate, write_eegb
from .train import (
    checkpoint_from_fit,
    evaluate,
    fit,
    label_dim_of,
    load_checkpoint,
    make_split,
    save_checkpoint,
    vote_per_trial,
)

log = logging.getLogger("eegemo")

LABEL_DIM_CHOICES = tuple(d.name.lower() for d in LabelDim)
CHECKPOINT_NAME = "model.emoc"
METRICS_NAME = "metrics.csv"
CONFIG_NAME = "effective.cfg"

# test-only seam for the gradcheck negative control
GRAD_HOOK = None


def _load_config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e.strerror or e}") from e


def cmd_synth(args) -> int:
    spec = parse_synth_spec(read_text(args.spec)) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    ts = synth_generate(spec)
    write_eegb(ts, args.out)
    print(f"wrote {args.out}: {ts.n_trials} trials x {ts.n_channels} channels x {ts.n_samples} samples")
    return 0


def cmd_convert(args) -> int:
    ts = read_npy_pair(args.data, args.labels, args.fs, lenient=args.lenient)
    write_eegb(ts, args.out)
    print(f"wrote {args.out}: {ts.n_trials} trials x {ts.n_channels} channels x {ts.n_samples} samples")
    return 0


def build_features(paths, run: RunConfig, threads: int = 1) -> FeatureDataset:
    """Extract and pool sequences from several EEGB files; trial ids stay unique."""
    parts, offset = [], 0
    for path in paths:
        ts = read_eegb(path, lenient=run.lenient)
        raw, _ = extract_features(
            ts, run.channels, run.bands, run.plan(),
            allow_rate_mismatch=run.allow_rate_mismatch, log_power=run.log_power, threads=threads,
        )
        ds = to_sequences(raw, ts.labels, run.sequence_mode, run.window_steps)
        parts.append(FeatureDataset(ds.features, ds.classes, ds.trial_index + offset))
        offset += ts.n_trials
    if len(parts) == 1:
        return parts[0]
    shapes = {p.features.shape[1:] for p in parts}
    if len(shapes) != 1:
        raise ShapeError(f"input files give incompatible sample shapes {sorted(shapes)}")
    return FeatureDataset(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.classes for p in parts]),
        np.concatenate([p.trial_index for p in parts]),
    )


def cmd_features(args) -> int:
    run = _load_config(args.config)
    if args.channels is not None:
        try:
            channels = tuple(int(c) for c in args.channels.split(",") if c.strip())
        except ValueError:
            raise ConfigError(f"bad --channels value {args.channels!r}") from None
        run = run.replace(channels=channels)
    threads = args.threads or run.threads
    ds = build_features(args.inputs, run, threads)
    write_feat(ds, args.out)
    print(f"wrote {args.out}: {ds.n_samples} samples, seq_len {ds.seq_len}, input_dim {ds.input_dim}")
    return 0


_OVERRIDES = ("epochs", "batch_size", "lr", "threads", "patience")


def train_config(args) -> RunConfig:
    run = _load_config(args.config)
    changes = {k: getattr(args, k) for k in _OVERRIDES if getattr(args, k) is not None}
    if args.label_dim is not None:
        changes["label_dim"] = LabelDim.parse(args.label_dim)
    if args.seed is not None:
        changes.update(init_seed=args.seed, shuffle_seed=args.seed, dropout_seed=args.seed,
                       split_seed=args.seed)
    if args.final_epoch:
        changes["final_epoch"] = True
    return run.replace(**changes) if changes else run


def metrics_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "split", "loss", "accuracy"])
    for epoch, split, loss, acc in history:
        w.writerow([epoch, split, repr(float(loss)), repr(float(acc))])
    return buf.getvalue()


def cmd_train(args) -> int:
    run = train_config(args)
    ds = read_feat(args.feat)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {out}: {e.strerror or e}") from e

    def progress(epoch, res, m):
        print(f"epoch {epoch:3d}  train loss {res.loss:.4f}  train acc {res.accuracy:.4f}  "
              f"test loss {m.loss:.4f}  test acc {m.accuracy:.4f}", flush=True)

    res = fit(ds, run, on_epoch=None if args.quiet else progress)
    save_checkpoint(out / CHECKPOINT_NAME, checkpoint_from_fit(res))
    _write_text(out / METRICS_NAME, metrics_csv(res.history))
    _write_text(out / CONFIG_NAME, run.dumps())
    print(res.metrics.report(f"{run.label_dim.name.lower()}: best epoch {res.best_epoch}"))
    return 0


def _eval_indices(ds: FeatureDataset, run: RunConfig, which: str) -> np.ndarray:
    if which == "all":
        return np.arange(ds.n_samples)
    split = make_split(ds, run)
    return split.test if which == "test" else split.train


def evaluate_checkpoint(ck, ds: FeatureDataset, which: str = "test", vote: bool = False):
    cfg = ck.model_cfg
    if (ds.seq_len, ds.input_dim) != (cfg.seq_len, cfg.input_dim):
        raise ShapeError(
            f"checkpoint expects samples of ({cfg.seq_len}, {cfg.input_dim}), "
            f"feature file has ({ds.seq_len}, {ds.input_dim})"
        )
    feats = ds.features if ck.stats is None else zscore_apply(ds.features, ck.stats)
    dim = label_dim_of(ck)
    classes = ds.class_indices(dim)
    idx = _eval_indices(ds, ck.run, which)
    m = evaluate(ck.params, cfg, feats, classes, idx)
    voted = vote_per_trial(ck.params, cfg, feats, classes, ds.trial_index, idx) if vote else None
    return dim, m, voted


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ds = read_feat(args.feat)
    dim, m, voted = evaluate_checkpoint(ck, ds, args.split, args.vote_per_trial)
    print(m.report(f"{dim.name.lower()} ({args.split} split, per window)"))
    if voted is not None:
        print()
        print(voted.report(f"{dim.name.lower()} ({args.split} split, majority vote per trial)"))
    return 0


def accuracy_table(results: dict) -> str:
    """Accuracies of the four label dimensions side by side, plus their mean."""
    dims = [d for d in LabelDim if d in results]
    head = "".join(f"{d.name.capitalize():>12s}" for d in dims) + f"{'Overall':>12s}"
    accs = [results[d] for d in dims]
    row = "".join(f"{100 * a:>11.2f}%" for a in accs) + f"{100 * float(np.mean(accs)):>11.2f}%"
    return head + "\n" + row


def cmd_report(args) -> int:
    ds = read_feat(args.feat)
    results = {}
    for path in args.checkpoints:
        dim, m, _ = evaluate_checkpoint(load_checkpoint(path), ds, args.split)
        if dim in results:
            raise ConfigError(f"two checkpoints for label dimension {dim.name.lower()}")
        results[dim] = m.accuracy
    print(accuracy_table(results))
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(args.seed, grad_hook=GRAD_HOOK)
    print("\n".join(report.lines()))
    return 0 if report.passed else 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eegemo", description="EEG band-power BiLSTM emotion classifier")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a labeled synthetic EEGB file")
    s.add_argument("--spec", help="synthetic spec file (key = value)")
    s.add_argument("--seed", type=int, help="override the generator seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("convert", help="NPY data/labels pair to EEGB")
    s.add_argument("--data", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--fs", type=float, default=128.0, help="sample rate in Hz (default 128)")
    s.add_argument("--lenient", action="store_true", help="clamp out-of-range labels with a warning")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("features", help="band-power sequences from one or more EEGB files")
    s.add_argument("--in", dest="inputs", nargs="+", required=True)
    s.add_argument("--config")
    s.add_argument("--channels", help="comma-separated zero-based channel indices")
    s.add_argument("--threads", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="train one model for one label dimension")
    s.add_argument("--feat", required=True)
    s.add_argument("--label-dim", choices=LABEL_DIM_CHOICES, type=str.lower)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--patience", type=int)
    s.add_argument("--seed", type=int, help="set every seed (init, shuffle, dropout, split)")
    s.add_argument("--threads", type=int)
    s.add_argument("--final-epoch", action="store_true", help="keep the last epoch, not the best")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    split_help = "samples to score: the checkpoint's test split (default), train split, or all"
    s = sub.add_parser("eval", help="score a checkpoint on a feature file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--feat", required=True)
    s.add_argument("--split", choices=("test", "train", "all"), default="test", help=split_help)
    s.add_argument("--vote-per-trial", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="accuracy table across label dimensions")
    s.add_argument("--feat", required=True)
    s.add_argument("--checkpoints", nargs="+", required=True)
    s.add_argument("--split", choices=("test", "train", "all"), default="test", help=split_help)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for name in ("threads", "epochs", "batch_size"):
        value = getattr(args, name, None)
        if value is not None and value < 1:
            print(f"error: --{name.replace('_', '-')} must be >= 1", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except EmoError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
