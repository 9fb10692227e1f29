"""Command-line entry point: ``scribocc <command> ...``.

Exit codes: 0 success, 1 usage error, 2 malformed input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .grid import UNLABELED, GridSpec, LabelGrid
from .io import FormatError, read_label_map, read_point_labels, read_poses, read_scan, write_report
from .io import load_grid, save_grid
from .metrics import RangeReport, range_report
from .pipeline import ConfigError, TrainConfig, config_from_dict, config_to_dict

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("scribocc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _load_config(path) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    return config_from_dict(data)


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dims(text: str):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--volume expects X,Y,Z integers, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 2:
        raise UsageError("--volume needs three sizes >= 2")
    return dims


# -- commands ----------------------------------------------------------------------


def cmd_synth(args):
    from .pipeline import prepare

    cfg = _load_config(args.config)
    inputs = prepare(cfg)
    out = Path(args.out)
    stem = out.with_suffix("")
    K = cfg.scene.num_classes
    save_grid(out, inputs.scene.truth)
    save_grid(f"{stem}.scribbles.sscv", inputs.scribbles)
    # corrupted input geometry: occupied voxels carry no semantic label
    noisy = np.where(inputs.G_noisy, UNLABELED, 0).astype(np.uint16)
    save_grid(f"{stem}.noisy.sscv", LabelGrid(inputs.spec, noisy, K))
    np.save(f"{stem}.hints.npy", inputs.scene.hints)
    write_report(f"{stem}.json", {"config": config_to_dict(cfg), "scene": inputs.scene.meta})
    print(f"wrote {out} and companions under {stem}.*")


def _sorted_files(d: Path, suffix: str):
    files = sorted(p for p in d.iterdir() if p.suffix == suffix)
    if not files:
        raise UsageError(f"no *{suffix} files in {d}")
    return files


def cmd_build_labels(args):
    from .labels import AccumulationWindow, accumulate_scans, labeling_stats, majority_vote

    scans_dir, labels_dir = Path(args.scans), Path(args.labels)
    scan_files = _sorted_files(scans_dir, ".bin")
    label_files = _sorted_files(labels_dir, ".label")
    if len(scan_files) != len(label_files):
        raise UsageError(f"{len(scan_files)} scans but {len(label_files)} label files")
    label_map = read_label_map(Path(args.label_map).read_text()) if args.label_map else None
    poses = read_poses(Path(args.poses).read_text())
    if len(poses) < len(scan_files):
        raise FormatError(f"{len(poses)} poses for {len(scan_files)} scans")
    if not 0 <= args.frame < len(scan_files):
        raise UsageError(f"--frame {args.frame} outside 0..{len(scan_files) - 1}")

    window = AccumulationWindow(args.window)
    last = min(args.frame + window.n_future, len(scan_files) - 1)
    scans = {}
    for i in range(args.frame, last + 1):
        pc = read_scan(scan_files[i].read_bytes())
        pc.labels = read_point_labels(label_files[i].read_bytes(), len(pc), label_map)
        scans[i] = pc
    # poses relative to the target frame, so the grid sits in that frame's sensor coordinates
    to_frame = poses[args.frame].inverse()
    frames = range(args.frame, last + 1)
    cloud = accumulate_scans([scans[i] for i in frames], [to_frame.compose(poses[i]) for i in frames], 0, window)
    spec = GridSpec() if args.grid == "kitti" else GridSpec.desk()
    grid = majority_vote(cloud, spec, args.num_classes)
    save_grid(args.out, grid)
    stats = labeling_stats(grid)
    print(json.dumps({k: stats[k] for k in ("labeled", "unlabeled", "empty", "labeled_fraction")}))


def _write_model_stage(out: Path, name: str, model, history, extra: dict):
    from .model import save_model

    save_model(out / f"{name}.npz", model)
    write_report(out / f"{name}.json", {"history": history, **extra})


def cmd_train_dean(args):
    from .pipeline import prepare, train_dean

    cfg = _load_config(args.config)
    out = _out_dir(args.out_dir)
    inputs = prepare(cfg)
    dean = train_dean(inputs, cfg)
    save_grid(out / "pseudo.sscv", dean.pseudo)
    report = range_report(dean.pseudo, inputs.scene.truth, cfg.partition)
    _write_model_stage(out, "dean", dean.model, dean.history, {"report": report.to_dict(), "config": config_to_dict(cfg)})
    print(f"dean: IoU {report.iou[-1]:.2f} mIoU {report.miou[-1]:.2f} -> {out}")


def cmd_train_teacher(args):
    from .pipeline import evaluate_model, prepare, train_teacher

    cfg = _load_config(args.config)
    out = _out_dir(args.out_dir)
    inputs = prepare(cfg)
    teacher = train_teacher(inputs, cfg)
    report = evaluate_model(teacher.model, inputs.feats_clean, inputs, cfg)
    _write_model_stage(out, "teacher", teacher.model, teacher.history, {"report": report.to_dict(), "config": config_to_dict(cfg)})
    print(f"teacher: IoU {report.iou[-1]:.2f} mIoU {report.miou[-1]:.2f} -> {out}")


def cmd_train_student(args):
    from .model import load_model
    from .pipeline import prepare, teacher_from_model, train_student

    cfg = _load_config(args.config)
    out = _out_dir(args.out_dir)
    inputs = prepare(cfg)
    pseudo = load_grid(args.pseudo, cfg.scene.num_classes)
    if pseudo.spec != inputs.spec:
        raise FormatError(f"{args.pseudo}: grid geometry does not match the configured scene")
    teacher = teacher_from_model(load_model(args.teacher), inputs)
    res = train_student(inputs, pseudo, teacher, cfg)
    save_grid(out / "pred.sscv", res.pred)
    _write_model_stage(out, "student", res.model, res.history, {"report": res.report.to_dict(), "config": config_to_dict(cfg)})
    write_report(out / "report.json", res.report.to_dict())
    print(f"student: IoU {res.report.iou[-1]:.2f} mIoU {res.report.miou[-1]:.2f} -> {out}")


def cmd_eval(args):
    from .grid import RangePartition

    pred = load_grid(args.pred)
    gt = load_grid(args.gt)
    K = max(pred.num_classes, gt.num_classes)
    pred, gt = LabelGrid(pred.spec, pred.codes, K), LabelGrid(gt.spec, gt.codes, K)
    reference = None
    if args.reference:
        try:
            reference = RangeReport.from_dict(json.loads(Path(args.reference).read_text()))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise FormatError(f"{args.reference}: not a range report ({e})") from None
    report = range_report(pred, gt, RangePartition.for_spec(gt.spec), reference)
    if args.out:
        write_report(args.out, report.to_dict())
    for r, iou, m in zip(report.ranges, report.iou, report.miou):
        print(f"{r:6.2f} m  IoU {iou:6.2f}  mIoU {m:6.2f}")


def cmd_stats(args):
    from .labels import labeling_stats

    grid = load_grid(args.grid)
    ref = load_grid(args.reference, grid.num_classes) if args.reference else None
    stats = labeling_stats(grid, ref)
    if args.out:
        write_report(args.out, stats)
    print(json.dumps(stats, indent=2, sort_keys=True, default=float))


def cmd_gradcheck(args):
    from .certify import TOLERANCE, run_all

    dims = _dims(args.volume)
    if not args.eps > 0:
        raise UsageError("--eps must be > 0")
    errs = run_all(dims, args.eps, args.seed, composite_dims=dims)
    bad = [k for k, v in errs.items() if not v < TOLERANCE]
    for k, v in errs.items():
        print(f"{'ok  ' if v < TOLERANCE else 'FAIL'} {k:26s} max rel err {v:.3e}")
    if bad:
        raise FloatingPointError(f"gradient check failed for {', '.join(bad)}")


def cmd_ablate(args):
    from .pipeline import ablation_suite

    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    cfg = _load_config(args.config)
    table = ablation_suite(cfg, tuple(range(args.seeds)))
    write_report(args.out, table)
    for row in table["rows"]:
        print(f"{row['name']:16s} IoU {row['iou']:6.2f}  mIoU {row['miou']:6.2f}")


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scribocc", description="Scribble-supervised semantic occupancy toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic scene, its scribbles and corrupted inputs")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build-labels", help="accumulate labeled scans into a voxel label grid")
    s.add_argument("--scans", required=True, help="directory of .bin scans")
    s.add_argument("--labels", required=True, help="directory of .label files")
    s.add_argument("--poses", required=True)
    s.add_argument("--frame", type=int, required=True)
    s.add_argument("--window", type=int, default=70, help="future scans to accumulate")
    s.add_argument("--label-map", help="label map file, one 'raw_id target_id' pair per line")
    s.add_argument("--grid", choices=("kitti", "desk"), default="kitti")
    s.add_argument("--num-classes", type=int, default=19)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_labels)

    for name, func in (("train-dean", cmd_train_dean), ("train-teacher", cmd_train_teacher)):
        s = sub.add_parser(name)
        s.add_argument("--config")
        s.add_argument("--out-dir", required=True)
        s.set_defaults(func=func)
    s = sub.add_parser("train-student")
    s.add_argument("--config")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--pseudo", required=True, help="pseudo-label grid from train-dean")
    s.add_argument("--teacher", required=True, help="teacher.npz from train-teacher")
    s.set_defaults(func=cmd_train_student)

    s = sub.add_parser("eval", help="range-partitioned IoU / mIoU")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--reference", help="fully supervised report for SS/FS ratios")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", help="labeling statistics of a grid")
    s.add_argument("--grid", required=True)
    s.add_argument("--reference")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("gradcheck", help="certify analytic gradients against finite differences")
    s.add_argument("--volume", default="6,6,4")
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablate", help="module and distillation ablation table")
    s.add_argument("--config")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        print(f"scribocc: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"scribocc: {e.filename}: no such file", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ConfigError) as e:
        print(f"scribocc: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except FloatingPointError as e:
        print(f"scribocc: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # remaining value errors come from malformed inputs (bad model file, label overflow, ...)
        print(f"scribocc: {e}", file=sys.stderr)
        return EXIT_FORMAT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
