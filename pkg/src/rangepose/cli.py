"""Command-line front end: ``rangepose <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .core import RangeImage, RangePoseError
from .curvature import SurfaceClass, curvature_field
from .imageio import PoseLabel, load_manifest, read_grid, save_grid, write_grid
from .pipeline import Config, STAGES, preprocess_image, run_pipeline
from .pose import classify_pose
from .report import emit_report, evaluate
from .synth import FULL_SCHEDULE, SINGLE_AXIS, YAW_LADDER, COMPOSITES, SynthFaceParams, generate, make_corpus

SCHEDULES = {
    "full": FULL_SCHEDULE,
    "single": SINGLE_AXIS,
    "yaw": YAW_LADDER,
    "composite": COMPOSITES,
}


def _load_config(args) -> Config:
    cfg = Config.load(args.config) if args.config else Config()
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise RangePoseError(f"--set expects section.key=value, got {item!r}")
        cfg = cfg.override(key, value)
    if args.seed is not None:
        cfg = cfg.override("preprocess.seed", args.seed)
    return cfg


def _write(args, data: bytes | str) -> None:
    if isinstance(data, str):
        data = data.encode()
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.write(data.decode())


def _schedule(names: list[str]):
    labels = []
    for name in names:
        if name in SCHEDULES:
            labels += SCHEDULES[name]
        else:
            labels.append(PoseLabel.parse(name))
    return tuple(dict.fromkeys(labels))


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    base = SynthFaceParams(noise_sigma=args.noise, spike_rate=args.spike_rate, grid=args.grid)
    seed = args.seed or 0
    if args.label:
        lab = PoseLabel.parse(args.label)
        img, truth = generate(base.posed(lab.yaw, lab.pitch, lab.roll, seed=seed))
        if not args.out:
            raise RangePoseError("synth --label needs --out FILE")
        write_grid(args.out, img)
        print(json.dumps(truth.to_dict(), sort_keys=True))
        return 0
    if not args.out:
        raise RangePoseError("synth needs --out DIR")
    manifest = make_corpus(_schedule(args.schedule), args.subjects, args.out, seed=seed, base=base)
    print(f"wrote {len(manifest.entries)} images for {len(manifest.subjects())} subjects to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    if args.stages is not None:
        cfg = cfg.override("preprocess.order", [s for s in args.stages.split(",") if s])
    img = preprocess_image(read_grid(args.image), cfg.preprocess)
    _write(args, save_grid(img))
    return 0


def cmd_curvature(args) -> int:
    cfg = _load_config(args)
    img = preprocess_image(read_grid(args.image), cfg.preprocess)
    field = curvature_field(img, cfg.curvature.radius, cfg.curvature.edge_margin)
    classes = field.classes(cfg.curvature.eps_h, cfg.curvature.eps_k)
    if args.hk:
        write_grid(f"{args.hk}.H.rgz", RangeImage.from_array(field.H))
        write_grid(f"{args.hk}.K.rgz", RangeImage.from_array(field.K))
    if args.format == "json":
        counts = {c.name: int((classes == c).sum()) for c in SurfaceClass}
        grid = [[None if c < 0 else int(c) for c in row] for row in classes]
        _write(args, json.dumps({"shape": list(field.shape), "counts": counts, "classes": grid}) + "\n")
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "v", "H", "K", "class"])
        for u, v in zip(*np.nonzero(field.valid)):
            w.writerow([u, v, repr(float(field.H[u, v])), repr(float(field.K[u, v])), SurfaceClass(classes[u, v]).name])
        _write(args, buf.getvalue())
    else:
        # one character per pixel: class code 0-8, '.' where no fit exists
        rows = ["".join("." if c < 0 else str(c) for c in row) for row in classes]
        _write(args, "\n".join(rows) + "\n")
    return 0


def cmd_landmarks(args) -> int:
    cfg = _load_config(args)
    lm = run_pipeline(read_grid(args.image), cfg)
    if args.json or args.format == "json":
        _write(args, json.dumps(lm.to_dict(), sort_keys=True) + "\n")
    else:
        (u, v), z = lm.nose
        lines = [f"nose {u} {v} {z!r}"] + [f"corner {c.at[0]} {c.at[1]} {c.K!r}" for c in lm.corners]
        _write(args, "\n".join(lines) + "\n")
    return 0


def cmd_pose(args) -> int:
    cfg = _load_config(args)
    frontal = run_pipeline(read_grid(args.frontal), cfg)
    probe = run_pipeline(read_grid(args.probe), cfg)
    y_ref = run_pipeline(read_grid(args.y_ref), cfg) if args.y_ref else None
    pose = classify_pose(frontal, probe, y_ref, cfg.pose.convention, cfg.pose.thresholds)
    _write(args, f"{pose.value}\n")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path.read_bytes())
    workers = args.workers or cfg.eval.workers
    report = evaluate(manifest, cfg, base_dir=manifest_path.parent, workers=workers)
    fmt = args.format
    if fmt is None:
        fmt = {".json": "json", ".csv": "csv"}.get(Path(args.out).suffix if args.out else "", "text")
    _write(args, emit_report(report, fmt))
    for path, msg in report.errors:
        print(f"{path}: {msg}", file=sys.stderr)
    return 1 if report.errors else 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--seed", type=int, help="random seed (despiking, or corpus generation for synth)")
    common.add_argument("--format", choices=("text", "csv", "json"), help="output format")
    common.add_argument("--out", metavar="PATH", help="output file or directory (default: stdout)")

    ap = argparse.ArgumentParser(prog="rangepose", description="Pose axis detection on range images.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic face or a labelled corpus")
    p.add_argument("--label", help="write one image with this pose label (e.g. y:+10) to --out")
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--schedule", nargs="+", default=["full"],
                   help=f"schedule names ({', '.join(SCHEDULES)}) or pose labels")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian depth noise sigma")
    p.add_argument("--spike-rate", type=float, default=0.0)
    p.add_argument("--grid", type=int, default=101)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="crop, despike and smooth one image")
    p.add_argument("image")
    p.add_argument("--stages", help=f"comma-separated subset/order of {','.join(STAGES)}")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("curvature", parents=[common], help="H/K curvature and surface classes")
    p.add_argument("image")
    p.add_argument("--hk", metavar="PREFIX", help="also write PREFIX.H.rgz and PREFIX.K.rgz")
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("landmarks", parents=[common], help="nose tip and inner eye corners")
    p.add_argument("image")
    p.add_argument("--json", action="store_true", help="same as --format json")
    p.set_defaults(func=cmd_landmarks)

    p = sub.add_parser("pose", parents=[common], help="classify a probe against a frontal reference")
    p.add_argument("--frontal", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--y-ref", help="pure-yaw reference for composite detection")
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("eval", parents=[common], help="evaluate a manifest and emit a report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); keep the interpreter quiet on exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1
    except (RangePoseError, OSError, ValueError) as exc:
        print(f"rangepose {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
