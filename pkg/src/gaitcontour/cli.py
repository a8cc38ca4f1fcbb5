"""``gaitcontour`` command line: synth, extract, train, eval, flops.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import contour_pose as cp
from . import evaluation as ev
from .config import ExperimentConfig, config_to_dict, load_config
from .errors import GaitContourError, TooFewContourPoints
from .geometry import ApproxConfig, approximate_dominant_points, trace_border
from .io import read_mask_dir, read_pose_json
from .model import count_attention_ops
from .synth import generate_dataset
from .training import TrainingSet, train_loop

log = logging.getLogger("gaitcontour")


class DataError(Exception):
    """Input problem reported to the user with exit code 1."""


# extract ----------------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ExtractOptions:
    min_points: int = 300
    uniform: int = 0  # ring-graph size for the uniform ablation, 0 = Contour-Pose
    no_order: bool = False
    seed: int = 0


def extract_one(masks_dir: str, poses_path: str, out_path: str, opts: ExtractOptions, index: int = 0) -> str:
    masks = read_mask_dir(masks_dir)
    pose = read_pose_json(poses_path)
    kps = pose["keypoints"]
    if len(masks) != len(kps):
        raise DataError(f"{masks_dir}: {len(masks)} masks but {len(kps)} pose frames")
    cfg = ApproxConfig(min_points=opts.min_points)
    contours, problems = [], []
    for t, m in enumerate(masks):
        try:
            approx = approximate_dominant_points(trace_border(m), cfg)
            if opts.uniform:
                approx = cp.sample_uniform_contour(approx, opts.uniform)
            elif len(approx) < cp.CONTOUR_PER_KEYPOINT:
                raise TooFewContourPoints(f"{len(approx)} contour points")
            contours.append(approx)
        except GaitContourError as exc:
            problems.append(f"frame {t + 1}: {type(exc).__name__}: {exc}")
    if problems:
        raise DataError(f"{masks_dir}:\n  " + "\n  ".join(problems))

    subject, view = pose.get("subject_id"), pose.get("view_id")
    if opts.uniform:
        seq = cp.ContourPoseSequence(np.stack([r.points for r in contours]), None, contours[0].edges,
                                     subject, view, kind="ring")
    else:
        seq = cp.build_sequence(contours, [cp.reduce_head(p) for p in kps], subject, view)
        if opts.no_order:
            seq = cp.shuffle_sequence(seq, [opts.seed, index])
        seq = dataclasses.replace(seq, points=cp.normalize_points(seq.points), normalized=True)
    cp.save_cpz(out_path, seq)
    return out_path


def _extract_job(job):
    return extract_one(*job)


def run_extract(jobs: list, n_jobs: int) -> list[str]:
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_extract_job, jobs))
    return [_extract_job(j) for j in jobs]


# data loading -----------------------------------------------------------------------------

def load_split(directory: str, include: str = "*.cpz") -> list[cp.ContourPoseSequence]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{directory}: not a directory")
    files = sorted(p for p in d.glob(include) if p.suffix == ".cpz")
    if not files:
        raise DataError(f"{directory}: no .cpz files match {include!r}")
    seqs = [cp.load_cpz(f) for f in files]
    for f, s in zip(files, seqs):
        if s.kind != "contour_pose":
            raise DataError(f"{f}: {s.kind} sequences cannot be fed to the model")
        if s.subject_id is None:
            raise DataError(f"{f}: missing subject_id")
    return seqs


# commands ---------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    entries = generate_dataset(args.ids, args.seqs, args.frames, args.seed, args.out,
                               (args.size, args.size))
    log.info("wrote %d sequences to %s", len(entries), args.out)
    return 0


def cmd_extract(args) -> int:
    opts = ExtractOptions(args.min_points, 112 if args.uniform112 else 0, args.no_order, args.seed)
    if args.dataset:
        root = Path(args.dataset)
        dirs = sorted(p for p in root.iterdir() if (p / "pose.json").is_file())
        if not dirs:
            raise DataError(f"{root}: no sequence directories with pose.json")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        jobs = [(str(d), str(d / "pose.json"), str(out / f"{d.name}.cpz"), opts, i) for i, d in enumerate(dirs)]
    else:
        if not (args.masks and args.poses):
            raise UsageError("extract needs --dataset or both --masks and --poses")
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        jobs = [(args.masks, args.poses, args.out, opts, 0)]
    written = run_extract(jobs, args.jobs)
    log.info("wrote %d .cpz file(s)", len(written))
    return 0


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        cfg = dataclasses.replace(cfg, triplet=dataclasses.replace(cfg.triplet, steps=args.steps))
    return cfg.seeded()


def cmd_train(args) -> int:
    cfg = _experiment(args)
    train_dir = args.data or cfg.data.train.dir
    if not train_dir:
        raise UsageError("train needs --data or data.train.dir in the config")
    include = args.include or cfg.data.train.include
    data = TrainingSet.from_sequences(load_split(train_dir, include))
    out = Path(args.out)
    train_loop(data, cfg.model, cfg.triplet, cfg.augment, out_dir=out, log_every=args.log_every)
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    log.info("checkpoint written to %s", out / "model.gct")
    return 0


def cmd_eval(args) -> int:
    cfg = _experiment(args)
    model = ev.load_model(args.checkpoint, cfg.model)
    frames = args.frames if args.frames is not None else cfg.eval.frames
    gallery_dir = args.gallery or cfg.data.gallery.dir
    probe_dir = args.probe or cfg.data.probe.dir
    if not (gallery_dir and probe_dir):
        raise UsageError("eval needs --gallery and --probe (or data.gallery/probe in the config)")
    g_inc = args.gallery_include or cfg.data.gallery.include
    p_inc = args.probe_include or cfg.data.probe.include
    gallery = ev.embed_dataset(load_split(gallery_dir, g_inc), model, frames, "gallery")
    probe = ev.embed_dataset(load_split(probe_dir, p_inc), model, frames, "probe")
    if args.aggregate or cfg.eval.aggregate:
        gallery = ev.aggregate_by_subject(gallery)
    report = ev.evaluate(gallery, probe, cfg.eval.ks, cfg.eval.far_points)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.scores:
        ev.write_score_csv(args.scores, gallery, probe)
    if args.plot:
        fars, tars = ev.roc_curve(gallery, probe)
        Path(args.plot).write_text(ev.roc_svg(fars, tars))
    return 0


def cmd_flops(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    ops = count_attention_ops(cfg.model)
    print(f"{'layer':>5} {'C':>5} {'local':>14} {'full':>14}")
    for row in ops["layers"]:
        print(f"{row['layer']:>5} {row['channels']:>5} {row['local']:>14,} {row['full']:>14,}")
    print(f"{'total':>11} {ops['local']:>14,} {ops['full']:>14,}")
    print(f"ratio {float(ops['ratio']):.6f}")
    return 0


# parser -----------------------------------------------------------------------------------

class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaitcontour", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gaitcontour {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic walker dataset")
    p.add_argument("--ids", type=int, default=8)
    p.add_argument("--seqs", type=int, default=4)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--size", type=int, default=256, help="square frame size in pixels")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="silhouettes + poses -> .cpz")
    p.add_argument("--masks", help="directory of PGM/PNG masks (one sequence)")
    p.add_argument("--poses", help="pose JSON for that sequence")
    p.add_argument("--dataset", help="directory of sequence directories (as written by synth)")
    p.add_argument("--out", required=True, help=".cpz file, or output directory with --dataset")
    p.add_argument("--min-points", type=int, default=300)
    p.add_argument("--uniform112", action="store_true", help="112-point ring graph instead of Contour-Pose")
    p.add_argument("--no-order", action="store_true", help="shuffle contour points within each keypoint group")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a model on a directory of .cpz files")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--include", help="file-name glob inside --data")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank retrieval and TAR@FAR report")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gallery")
    p.add_argument("--probe")
    p.add_argument("--gallery-include")
    p.add_argument("--probe-include")
    p.add_argument("--frames", type=int, help="crop/pad every sequence to this many frames")
    p.add_argument("--aggregate", action="store_true", help="one mean gallery template per subject")
    p.add_argument("--out", help="report JSON (default: stdout)")
    p.add_argument("--scores", help="write the probe x gallery score matrix as CSV")
    p.add_argument("--plot", help="write an SVG ROC curve")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="attention multiply-accumulates, local vs full")
    p.add_argument("--config")
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gaitcontour: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, GaitContourError, OSError, ValueError) as exc:
        print(f"gaitcontour: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
