#!/usr/bin/env python3
"""End-to-end experiment driver: synthesize an occluded-video benchmark,
train the single-frame and recursive detectors, evaluate the four inference
modes, and render a few overlays.

Defaults are a quick desk run (a couple of minutes); --full switches to the
benchmark scale used by the acceptance suite (roughly 15 minutes on one CPU).
"""

from __future__ import annotations

import argparse
import shutil
import sys
import time
from pathlib import Path

from videolane.cli import main as cli
from videolane.dataio import parse_report

MODES = ("ild", "rvld", "no_warp", "no_reuse")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/pipeline", help="working directory")
    p.add_argument("--train-clips", type=int, default=30)
    p.add_argument("--test-clips", type=int, default=10)
    p.add_argument("--profile", default="occluded",
                   choices=("easy", "occluded", "night"))
    p.add_argument("--k", type=int, default=16, help="feature channels")
    p.add_argument("--ild-epochs", type=int, default=4)
    p.add_argument("--pld-epochs", type=int, default=6)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true",
                   help="benchmark scale: 200/40 clips, k=32, 8+14 epochs")
    p.add_argument("--fresh", action="store_true",
                   help="delete the working directory first")
    return p


def step(argv: list[str]):
    print(f"$ videolane {' '.join(argv)}", flush=True)
    rc = cli(argv)
    if rc != 0:
        sys.exit(rc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.full:
        args.train_clips, args.test_clips = 200, 40
        args.k, args.ild_epochs, args.pld_epochs = 32, 8, 14

    out = Path(args.out)
    if args.fresh and out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_file = out / "run.yaml"
    cfg_file.write_text(
        f"k: {args.k}\n"
        f"ild_epochs: {args.ild_epochs}\n"
        f"pld_epochs: {args.pld_epochs}\n"
        f"ild_lr: {args.lr}\n"
        f"pld_lr: {args.lr}\n"
        "unit_stride: 2\n"
        f"seed: {args.seed}\n"
    )
    common = ["--config", str(cfg_file)]

    t0 = time.monotonic()
    step(["synth", "--out", str(out / "train"), "--profile", args.profile,
          "--clips", str(args.train_clips), "--seed", "1"])
    step(["synth", "--out", str(out / "test"), "--profile", args.profile,
          "--clips", str(args.test_clips), "--seed", "2"])
    step(["basis", *common, "--annotations", str(out / "train" / "annotations.txt"),
          "--out", str(out / "basis.bin")])
    step(["train-ild", *common, "--data", str(out / "train"),
          "--basis", str(out / "basis.bin"), "--out", str(out / "ild.bin")])
    step(["train-pld", *common, "--data", str(out / "train"),
          "--basis", str(out / "basis.bin"), "--ild", str(out / "ild.bin"),
          "--out", str(out / "pld.bin")])

    for mode in MODES:
        infer = ["infer", *common, "--data", str(out / "test"),
                 "--basis", str(out / "basis.bin"), "--ild", str(out / "ild.bin"),
                 "--out", str(out / f"pred_{mode}.txt")]
        if mode != "ild":
            infer += ["--pld", str(out / "pld.bin")]
        if mode in ("no_warp", "no_reuse"):
            infer += ["--ablation", mode]
        step(infer)
        step(["eval", *common, "--pred", str(out / f"pred_{mode}.txt"),
              "--gt", str(out / "test" / "annotations.txt"),
              "--out", str(out / f"report_{mode}.txt")])

    step(["render", *common, "--data", str(out / "test"),
          "--pred", str(out / "pred_rvld.txt"),
          "--gt", str(out / "test" / "annotations.txt"),
          "--out", str(out / "overlays")])

    print(f"\ndone in {time.monotonic() - t0:.0f}s")
    print(f"{'mode':<10} {'F1@.5':>7} {'F1@.8':>7} {'R_F@.5':>7} {'R_M@.5':>7} {'mIoU':>7}")
    reports = {m: parse_report(out / f"report_{m}.txt") for m in MODES}
    for mode in MODES:
        r = reports[mode]
        print(f"{mode:<10} {r['f1_050']:>7.4f} {r['f1_080']:>7.4f} "
              f"{r['rf_050']:>7.4f} {r['rm_050']:>7.4f} {r['miou']:>7.4f}")
    d = reports["rvld"]["f1_050"] - reports["ild"]["f1_050"]
    print(f"\nrecursion gain: F1@.5 {d:+.4f}, "
          f"R_F {reports['ild']['rf_050']:.4f} -> {reports['rvld']['rf_050']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
