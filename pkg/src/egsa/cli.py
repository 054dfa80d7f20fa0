"""Command-line entry point: dataset generation, training, evaluation,
ablation matrices, and edge-map debugging.

Exit codes are a stable scripting contract: 0 success, 1 runtime or data
failure, 2 usage error. Every run writes its fully resolved configuration
next to its outputs so results are self-describing.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .edges import RGB_SOURCE, build_pyramid, canny, depth_to_edges, rgb_to_gray
from .errors import (CheckpointError, ConfigError, DataError, FormatError,
                     MetricUndefinedError, ShapeError, TrainingError)
from .fusion import VARIANTS
from .metrics import CSV_HEADER
from .model import Model
from .rng import Xorshift64Star
from .scenes import (generate_dataset, load_split, read_dmap, read_manifest,
                     read_ppm, write_pgm)
from .tensor import Tensor4
from .trainer import (EPOCH_LOG_HEADER, TrainConfig, evaluate,
                      evaluation_edge_mode, load_checkpoint, save_checkpoint,
                      train)

ABLATION_HEADER = "variant,edge_schedule,seed," + CSV_HEADER
MEDIAN_HEADER = "variant,edge_schedule," + CSV_HEADER

_RUNTIME_ERRORS = (ConfigError, DataError, FormatError, ShapeError,
                   CheckpointError, TrainingError, MetricUndefinedError,
                   OSError, ValueError)


def _size(value: str):
    try:
        h, w = value.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected HxW (e.g. 64x64), got {value!r}") from None


def _seed_list(value: str):
    try:
        return [int(part) for part in value.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {value!r}") from None


def _run_config(parser: argparse.ArgumentParser,
                args: argparse.Namespace) -> RunConfig:
    """Config file (runtime input) + CLI overrides (usage input)."""
    file_text = None
    if getattr(args, "config", None):
        file_text = Path(args.config).read_text(encoding="utf-8")
        RunConfig.load(file_text)  # file problems -> ConfigError -> exit 1
    try:
        return RunConfig.load(file_text, overrides=args.overrides)
    except ConfigError as exc:
        parser.error(str(exc))  # bad override -> usage error, exit 2


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _resolved_echo(cfg: RunConfig, seed=None) -> str:
    head = f"# seed = {seed}\n" if seed is not None else ""
    return head + cfg.resolved_text()


# -- generate ----------------------------------------------------------------

def cmd_generate(parser, args) -> int:
    if args.train < 1 or args.test < 1:
        parser.error("--train and --test must both be at least 1")
    height, width = args.size
    cfg = RunConfig().updated({
        "data.height": height,
        "data.width": width,
        "data.num_objects": args.objects,
        "data.transparent_fraction": args.transparent_fraction,
        "data.depth_max": args.depth_max,
    })
    out = Path(args.out)
    generate_dataset(args.seed, cfg.scene_config(), args.train, args.test, out)
    _write(out / "resolved.cfg", _resolved_echo(cfg, args.seed))
    print(out / "manifest.txt")
    return 0


# -- train -------------------------------------------------------------------

def _load_scenes(data_dir, split: str):
    manifest = read_manifest(data_dir)
    return load_split(data_dir, manifest, split)


def cmd_train(parser, args) -> int:
    cfg = _run_config(parser, args)
    train_cfg = TrainConfig.from_run(cfg)
    train_scenes = _load_scenes(args.data, "train")
    test_scenes = (_load_scenes(args.data, "test")
                   if train_cfg.eval_every else None)
    result = train(train_cfg, train_scenes, seed=args.seed,
                   test_scenes=test_scenes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", result.model, result.optimizer,
                    result.state, train_cfg.config_hash())
    _write(out / "train_log.csv",
           EPOCH_LOG_HEADER + "\n" + "".join(r + "\n" for r in result.log_rows))
    _write(out / "resolved.cfg", _resolved_echo(cfg, args.seed))
    print(out / "model.ckpt")
    return 0


# -- eval ----------------------------------------------------------------------

def cmd_eval(parser, args) -> int:
    cfg = _run_config(parser, args)
    train_cfg = TrainConfig.from_run(cfg)
    model = Model(train_cfg.model, Xorshift64Star(0))
    state, _ = load_checkpoint(args.checkpoint, model,
                               expected_hash=train_cfg.config_hash())
    scenes = _load_scenes(args.data, args.split)
    mode = evaluation_edge_mode(train_cfg, state)
    report = evaluate(model, scenes, mode, config=train_cfg,
                      strict_transparent=False)
    out = Path(args.out)
    _write(out, report.to_csv())
    _write(out.with_suffix(".txt"), report.pretty())
    _write(out.with_suffix(".resolved.cfg"), _resolved_echo(cfg))
    print(report.pretty(), end="")
    return 0


# -- ablate ----------------------------------------------------------------------

def _ablation_plan(cfg: RunConfig):
    """(variant, schedule label, config) runs: every fusion variant under the
    default schedule, plus pure-RGB and depth-from-start for EGSA_SA."""
    plan = []
    epochs = cfg["train.epochs"]
    for variant in VARIANTS:
        label = "Progressive" if variant.startswith("EGSA") else "none"
        plan.append((variant, label,
                     cfg.updated({"fusion.variant": variant})))
    plan.append(("EGSA_SA", "RGB",
                 cfg.updated({"fusion.variant": "EGSA_SA",
                              "schedule.T": epochs})))
    plan.append(("EGSA_SA", "Depth",
                 cfg.updated({"fusion.variant": "EGSA_SA", "schedule.T": 0})))
    return plan


def _median_cell(values) -> str:
    if any(v is None for v in values):
        return "NA"
    return f"{float(np.median(values)):.6f}"


def cmd_ablate(parser, args) -> int:
    cfg = _run_config(parser, args)
    train_scenes = _load_scenes(args.data, "train")
    test_scenes = _load_scenes(args.data, "test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows, failures = [], []
    reports = {}  # (variant, label) -> list of MetricReport
    for variant, label, run_cfg in _ablation_plan(cfg):
        for seed in args.seeds:
            train_cfg = TrainConfig.from_run(run_cfg)
            try:
                result = train(train_cfg, train_scenes, seed=seed)
                mode = evaluation_edge_mode(train_cfg, result.state)
                report = evaluate(result.model, test_scenes, mode,
                                  config=train_cfg, strict_transparent=False)
            except _RUNTIME_ERRORS as exc:
                failures.append(f"{variant},{label},seed={seed}: {exc}")
                print(f"run failed: {variant} {label} seed={seed}: {exc}",
                      file=sys.stderr)
                continue
            rows.append(f"{variant},{label},{seed},"
                        + report.to_csv().splitlines()[1])
            reports.setdefault((variant, label), []).append(report)
            print(f"done: {variant:<12} {label:<12} seed={seed} "
                  f"rmse={report.rmse:.4f}")

    _write(out / "ablation.csv",
           ABLATION_HEADER + "\n" + "".join(r + "\n" for r in rows))

    median_rows = []
    for variant, label, _ in _ablation_plan(cfg):
        group = reports.get((variant, label))
        if not group:
            continue
        cells = [_median_cell([getattr(r, f) for r in group])
                 for f in group[0]._CSV_FIELDS]
        median_rows.append(f"{variant},{label}," + ",".join(cells))
    median_text = MEDIAN_HEADER + "\n" + "".join(r + "\n" for r in median_rows)
    _write(out / "medians.csv", median_text)
    _write(out / "resolved.cfg", _resolved_echo(cfg))
    if failures:
        _write(out / "failures.txt", "".join(f + "\n" for f in failures))
    print(median_text, end="")
    return 0 if rows else 1


# -- edges ------------------------------------------------------------------------

def cmd_edges(parser, args) -> int:
    cfg = _run_config(parser, args)
    sigma, low, high = (cfg["canny.sigma"], cfg["canny.low"],
                        cfg["canny.high"])
    path = Path(args.input)
    if args.mode == "rgb":
        rgb_u8 = read_ppm(path)
        rgb = Tensor4((rgb_u8.astype(np.float32) / 255.0)[None])
        edge = canny(rgb_to_gray(rgb), sigma, low, high)
    else:
        depth = read_dmap(path)
        edge = depth_to_edges(Tensor4(depth[None, None]), sigma, low, high)
    h, w = edge.height, edge.width
    num_scales = cfg["model.num_scales"]
    dims = tuple((h >> k, w >> k) for k in range(num_scales, 0, -1))
    pyramid = build_pyramid(edge, dims, source=RGB_SOURCE)

    def to_u8(t):
        return (t.data[0, 0] * 255).astype(np.uint8)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "edges_full.pgm", to_u8(edge))
    for k, level in enumerate(pyramid.levels):
        write_pgm(out / f"edges_level{k}.pgm", to_u8(level))
    _write(out / "resolved.cfg", _resolved_echo(cfg))
    print(out / "edges_full.pgm")
    return 0


# -- parser ------------------------------------------------------------------------

def _add_config_args(sub):
    sub.add_argument("--config", help="config file (key = value lines)")
    sub.add_argument("overrides", nargs="*", metavar="key=value",
                     help="config overrides, e.g. fusion.variant=MODEST_SA")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egsa",
        description="Edge-gated two-branch depth and segmentation "
                    "estimation on synthetic tabletop scenes.")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--train", type=int, default=200, metavar="N")
    gen.add_argument("--test", type=int, default=50, metavar="M")
    gen.add_argument("--size", type=_size, default=(64, 64), metavar="HxW")
    gen.add_argument("--objects", type=int, default=4, metavar="K")
    gen.add_argument("--transparent-fraction", type=float, default=0.5,
                     metavar="P")
    gen.add_argument("--depth-max", type=float, default=2.0)
    gen.set_defaults(func=cmd_generate)

    tr = commands.add_parser("train", help="train a model on a dataset")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int, default=0)
    _add_config_args(tr)
    tr.set_defaults(func=cmd_train)

    ev = commands.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True, help="report CSV path")
    ev.add_argument("--split", choices=("train", "test"), default="test")
    _add_config_args(ev)
    ev.set_defaults(func=cmd_eval)

    ab = commands.add_parser(
        "ablate", help="train/evaluate the fusion-variant and edge-source matrix")
    ab.add_argument("--data", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--seeds", type=_seed_list, default=[0, 1, 2, 3, 4],
                    metavar="S1,S2,...")
    _add_config_args(ab)
    ab.set_defaults(func=cmd_ablate)

    ed = commands.add_parser("edges", help="debug edge extraction on one image")
    ed.add_argument("--input", required=True, help="PPM image or DMAP depth")
    ed.add_argument("--mode", choices=("rgb", "depth"), required=True)
    ed.add_argument("--out", required=True)
    _add_config_args(ed)
    ed.set_defaults(func=cmd_edges)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(parser, args)
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
