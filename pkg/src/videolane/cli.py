"""Command-line surface.

Every run resolves one RunConfig (defaults < config file < flags) and logs
it together with the seed, so any output can be reproduced from its log.
Exit codes: 0 success, 1 IO/data failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import RunConfig, config_from_dict, load_config
from .dataio import (
    load_benchmark,
    load_tensors,
    parse_annotations,
    save_frame,
    save_tensors,
    write_annotations,
    write_report,
)
from .errors import ConfigError, VideolaneError
from .geometry import LanePolyline
from .pipeline import (
    REPORT_FIELDS,
    basis_from_records,
    complete_records,
    evaluate_predictions,
    flow_to_full,
    group_by_video,
    infer_clips,
    load_basis_checkpoint,
    load_ild_checkpoint,
    load_pld_checkpoint,
    run_train_ild,
    run_train_pld,
    save_basis_checkpoint,
    save_ild_checkpoint,
    save_pld_checkpoint,
)
from .render import render_overlay
from .synth import PROFILES, generate_benchmark

log = logging.getLogger("videolane")

ABLATIONS = ("no_warp", "no_guidance", "no_reuse")


def _setup_logging():
    level = os.environ.get("VIDEOLANE_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for flag in getattr(args, "ablation", None) or []:
        overrides[flag] = True
    if overrides:
        cfg = config_from_dict(overrides, base=cfg)
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    log.info("seed: %d", cfg.seed)
    return cfg


def _progress(msg: str):
    log.info("%s", msg)


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    overrides = json.loads(args.override) if args.override else None
    manifest = generate_benchmark(args.out, args.profile, args.clips,
                                  seed=cfg.seed, overrides=overrides)
    log.info("wrote %d clips to %s", manifest["n_clips"], args.out)
    return 0


def cmd_basis(args) -> int:
    cfg = _resolve_config(args)
    records = parse_annotations(args.annotations)
    basis = basis_from_records(records, cfg)
    save_basis_checkpoint(args.out, basis)
    log.info("basis m=%d written to %s", basis.m, args.out)
    return 0


def cmd_complete(args) -> int:
    cfg = _resolve_config(args)
    records = parse_annotations(args.annotations)
    write_annotations(args.out, complete_records(records, cfg))
    log.info("completed annotations written to %s", args.out)
    return 0


def cmd_train_ild(args) -> int:
    cfg = _resolve_config(args)
    _, clips = load_benchmark(args.data)
    basis = load_basis_checkpoint(args.basis)
    params, trace = run_train_ild(clips, basis, cfg, log=_progress)
    save_ild_checkpoint(args.out, params)
    log.info("ild checkpoint written to %s (final loss %.5f)", args.out, trace[-1])
    return 0


def cmd_train_pld(args) -> int:
    cfg = _resolve_config(args)
    _, clips = load_benchmark(args.data)
    basis = load_basis_checkpoint(args.basis)
    ild_params = load_ild_checkpoint(args.ild)
    params, trace = run_train_pld(clips, ild_params, basis, cfg,
                                  log=_progress)
    save_pld_checkpoint(args.out, params)
    log.info("pld checkpoint written to %s (final loss %.5f)", args.out, trace[-1])
    return 0


def cmd_infer(args) -> int:
    cfg = _resolve_config(args)
    _, clips = load_benchmark(args.data)
    basis = load_basis_checkpoint(args.basis)
    ild_params = load_ild_checkpoint(args.ild)
    pld_params = load_pld_checkpoint(args.pld) if args.pld else None
    records, flows = infer_clips(clips, ild_params, pld_params, basis, cfg,
                                 collect_flows=bool(args.dump_flows))
    write_annotations(args.out, records)
    if args.dump_flows:
        save_tensors(args.dump_flows, flows)
        log.info("motion fields written to %s", args.dump_flows)
    log.info("predictions for %d frames written to %s", len(records), args.out)
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    report = evaluate_predictions(
        parse_annotations(args.pred), parse_annotations(args.gt), cfg
    )
    write_report(args.out, report)
    log.info("report: %s", " ".join(f"{k}={report[k]:.4f}" for k in REPORT_FIELDS))
    return 0


def cmd_render(args) -> int:
    _resolve_config(args)
    _, clips = load_benchmark(args.data)
    pred_videos = group_by_video(parse_annotations(args.pred))
    gt_videos = group_by_video(parse_annotations(args.gt)) if args.gt else {}
    flows = load_tensors(args.flows) if args.flows else {}
    wanted = [c for c in clips if args.clip in (None, c.id)]
    if not wanted:
        raise ConfigError(f"no clip named {args.clip!r} in {args.data}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    for clip in wanted if args.clip else wanted[:1]:
        preds = pred_videos.get(clip.id, [])
        gts = gt_videos.get(clip.id, [])
        grid = clip.records[0].grid if clip.records else None
        for t, frame in enumerate(clip.frames):
            det_lanes = [
                LanePolyline(l.xs, l.valid) for l in preds[t].lanes
            ] if t < len(preds) else []
            gt_lanes = [
                LanePolyline(l.xs, l.valid) for l in gts[t].lanes
            ] if t < len(gts) else []
            flow = flows.get(f"{clip.id}.{t:03d}")
            motion = flow_to_full(flow) if flow is not None else None
            img = render_overlay(frame, det_lanes, gt_lanes, motion, grid)
            save_frame(out_dir / f"{clip.id}_frame_{t:03d}.png", img)
            n += 1
    log.info("wrote %d overlay images to %s", n, out_dir)
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--ablation", action="append", choices=ABLATIONS,
                        help="disable a recursion stage (repeatable)")

    p = argparse.ArgumentParser(prog="videolane",
                                description="recursive video lane detection")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", parents=[common],
                        help="generate a synthetic benchmark")
    sp.add_argument("--out", required=True)
    sp.add_argument("--profile", choices=PROFILES, default="easy")
    sp.add_argument("--clips", type=int, required=True)
    sp.add_argument("--override", help="JSON dict of SceneConfig overrides")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("basis", parents=[common],
                        help="fit the lane basis to annotations")
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_basis)

    sp = sub.add_parser("complete", parents=[common],
                        help="fill partially annotated lanes")
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_complete)

    sp = sub.add_parser("train-ild", parents=[common],
                        help="train the single-frame detector")
    sp.add_argument("--data", required=True)
    sp.add_argument("--basis", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_ild)

    sp = sub.add_parser("train-pld", parents=[common],
                        help="train the recursive stages")
    sp.add_argument("--data", required=True)
    sp.add_argument("--basis", required=True)
    sp.add_argument("--ild", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_pld)

    sp = sub.add_parser("infer", parents=[common],
                        help="detect lanes over a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--basis", required=True)
    sp.add_argument("--ild", required=True)
    sp.add_argument("--pld", help="omit to run the single-frame detector only")
    sp.add_argument("--out", required=True)
    sp.add_argument("--dump-flows", help="also write per-frame motion fields")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", parents=[common],
                        help="score predictions against ground truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("render", parents=[common],
                        help="write lane overlay images")
    sp.add_argument("--data", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", help="also draw ground truth")
    sp.add_argument("--flows", help="motion fields from infer --dump-flows")
    sp.add_argument("--clip", help="clip id (default: first clip)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render)

    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ConfigError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 2
    except (VideolaneError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
