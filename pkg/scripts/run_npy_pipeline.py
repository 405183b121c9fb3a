"""Full pipeline on a NPY export (data: trials x channels x samples, labels: trials x 4).

Converts, extracts features, trains one model per label dimension and prints
the accuracy table. Pass several --data/--labels pairs to pool participants.

    python scripts/run_npy_pipeline.py --data s01_data.npy --labels s01_labels.npy --out runs/s01
"""

import argparse
import sys
from pathlib import Path

from eegemo import cli
from eegemo.data_model import LabelDim


def step(argv):
    code = cli.main([str(a) for a in argv])
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", nargs="+", required=True)
    ap.add_argument("--labels", nargs="+", required=True)
    ap.add_argument("--config", help="RunConfig file")
    ap.add_argument("--out", required=True)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    if len(args.data) != len(args.labels):
        ap.error("need one --labels file per --data file")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eegb = []
    for i, (d, l) in enumerate(zip(args.data, args.labels)):
        eegb.append(out / f"part{i:02d}.eegb")
        step(["convert", "--data", d, "--labels", l, "--out", eegb[-1]])
    cfg = ["--config", args.config] if args.config else []
    step(["features", "--in", *eegb, *cfg, "--threads", args.threads, "--out", out / "features.feat"])
    dims = [d.name.lower() for d in LabelDim]
    for dim in dims:
        step(["train", "--feat", out / "features.feat", "--label-dim", dim, *cfg,
              "--threads", args.threads, "--out", out / dim])
    step(["report", "--feat", out / "features.feat", "--checkpoints", *[out / d / "model.emoc" for d in dims]])


if __name__ == "__main__":
    main()
