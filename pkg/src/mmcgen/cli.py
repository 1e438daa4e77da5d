"""Command-line front end: optimize, dataset, metrics, reanalyze, summarize.

Exit codes: 0 success, 1 runtime failure inside a subcommand, 2 malformed
configuration, 3 grid dimensions incompatible with the dataset image
format.  All subcommands are deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import dataset as ds
from .fea import FeaError, reanalyze_image
from .geometry import GeometryError
from .metrics import CANTILEVER_BINNING, LBEAM_BINNING, genus, m_nd
from .optimizer import OptimizationConfig, run_optimization
from .problems import ConfigError, attach_ground, problem_from_config
from .strategies import BaseCellSpec, strategy1, strategy2, strategy3

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_RESIZE = 3


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML/JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    return doc


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return sec


def _build_ground_from_config(problem, sec: dict, label: int,
                              config: OptimizationConfig, seed: int):
    cells = sec.get("cells", [3, 3])
    spec = BaseCellSpec(int(cells[0]), int(cells[1]))
    g = problem.grid
    strategy = int(sec.get("strategy", 1))
    if strategy == 1:
        ground = strategy1(spec, g.lx, g.ly, void_rect=problem.nondesign_rect)
        ground = attach_ground(ground, problem, label)
    elif strategy == 2:
        ground = strategy1(spec, g.lx, g.ly, void_rect=problem.nondesign_rect)
        ground = attach_ground(ground, problem, label)
        ground = strategy2(ground, problem.fea_model(label), config,
                           pre_iters=sec.get("pre_iters"), seed=seed)
    elif strategy == 3:
        ground = strategy3(spec, g.lx, g.ly, int(sec.get("n_extra", 10)),
                           seed=seed, void_rect=problem.nondesign_rect)
        ground = attach_ground(ground, problem, label)
    else:
        raise ConfigError(f"strategy must be 1, 2 or 3, got {strategy}")
    return ground


def cmd_optimize(args) -> int:
    doc = _load_config(args.config)
    problem = problem_from_config(_section(doc, "problem"))
    sec = _section(doc, "optimize")
    label = int(sec.get("label", 0))
    seed = args.seed if args.seed is not None else int(sec.get("seed", 0))
    config = OptimizationConfig(
        vbar=problem.vbar,
        max_iters=int(sec.get("iters", 150)),
        seed=seed,
        heaviside=problem.heaviside,
    )
    model = problem.fea_model(label)
    ground = _build_ground_from_config(problem, sec, label, config, seed)

    history = run_optimization(ground, model, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.txt").write_text(history.to_log())
    (out / "design.json").write_text(history.final_design.to_json())
    if history.error:
        print(f"optimization aborted: {history.error}", file=sys.stderr)
        return EXIT_RUNTIME

    from dataclasses import replace

    from .fea import analyze_design

    if history.final_heaviside is not None:
        model = replace(model, heaviside=history.final_heaviside)
    _, result = analyze_design(history.final_design, model, config.tdf)
    raw8 = ds.quantize(result.densities)
    ds.save_pgm(out / "raster.pgm", raw8)
    topo = genus(raw8 >= 128, problem.binning)
    report = {
        "compliance": result.compliance,
        "volume_fraction": result.volume_fraction,
        "genus": topo.genus,
        "complexity_level": topo.complexity_level,
        "betti0": topo.betti0,
        "m_nd": m_nd(raw8 / 255.0),
        "iterations": len(history.records) - 1,
    }
    (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    if args.dataset_format:
        try:
            image8 = ds.resize_to_square(raw8)
        except ds.DatasetError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RESIZE
        ds.save_png(out / "sample.png", image8)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_dataset(args) -> int:
    doc = _load_config(args.config)
    problem = problem_from_config(_section(doc, "problem"))
    sec = _section(doc, "dataset")
    try:
        plan_kwargs = {k: tuple(v) if isinstance(v, list) else v
                       for k, v in sec.items()}
        plan = ds.GenerationPlan(**plan_kwargs)
    except (TypeError, ds.DatasetError) as exc:
        raise ConfigError(f"invalid dataset plan: {exc}") from exc
    seed = args.seed if args.seed is not None else 0
    manifest = ds.generate_samples(
        problem, plan, master_seed=seed, out_dir=args.out,
        jobs=args.jobs, resume=args.resume, log=lambda m: print(m, flush=True))
    print(f"wrote {len(manifest.samples)} samples to {args.out}")
    return EXIT_OK


def _binning_for(name: str):
    if name == "cantilever":
        return CANTILEVER_BINNING
    if name == "l-beam":
        return LBEAM_BINNING
    raise ConfigError(f"unknown level scheme {name!r}")


def _iter_image_files(paths):
    for p in paths:
        path = Path(p)
        if path.is_dir():
            yield from sorted(q for q in path.iterdir()
                              if q.suffix.lower() in (".png", ".pgm"))
        else:
            yield path


def cmd_metrics(args) -> int:
    binning = _binning_for(args.levels)
    failures = 0
    for path in _iter_image_files(args.paths):
        try:
            raster8 = (ds.load_pgm(path) if path.suffix.lower() == ".pgm"
                       else ds.load_png(path))
            topo = genus(raster8 / 255.0 > args.threshold, binning)
            out = {
                "file": str(path),
                "euler": topo.euler,
                "betti0": topo.betti0,
                "genus": topo.genus,
                "complexity_level": topo.complexity_level,
                "diagonal_nodes": topo.diagonal_nodes,
                "m_nd": m_nd(raster8 / 255.0),
            }
            print(json.dumps(out, sort_keys=True))
        except Exception as exc:
            failures += 1
            print(f"error: {path}: {exc}", file=sys.stderr)
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_reanalyze(args) -> int:
    doc = _load_config(args.config)
    problem = problem_from_config(_section(doc, "problem"))
    path = Path(args.image)
    raster8 = ds.load_pgm(path) if path.suffix.lower() == ".pgm" else ds.load_png(path)
    g = problem.grid
    image = raster8 / 255.0
    if image.shape != (g.ny, g.nx):
        image = ds.inverse_resize(image, (g.ny, g.nx), args.resize_mode)
    model = problem.fea_model(args.label)
    result, infeasible = reanalyze_image(image, model, threshold=args.threshold)
    report = {
        "compliance": result.compliance,
        "volume_fraction": result.volume_fraction,
        "infeasible": infeasible,
        "load_pos": args.label,
        "threshold": args.threshold,
    }
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_summarize(args) -> int:
    manifest = ds.load_manifest(args.dataset_dir)
    report = ds.summarize(manifest)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmcgen",
        description="Component-based topology optimization and dataset generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="run one optimization from a config file")
    p_opt.add_argument("--config", required=True)
    p_opt.add_argument("--seed", type=int, default=None)
    p_opt.add_argument("--out", default="out")
    p_opt.add_argument("--dataset-format", action="store_true",
                       help="also write the square dataset-format image")
    p_opt.set_defaults(func=cmd_optimize)

    p_ds = sub.add_parser("dataset", help="generate a labeled dataset")
    p_ds.add_argument("--config", required=True)
    p_ds.add_argument("--seed", type=int, default=None)
    p_ds.add_argument("--out", required=True)
    p_ds.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p_ds.add_argument("--resume", action="store_true",
                      help="skip labels already complete in an existing manifest")
    p_ds.set_defaults(func=cmd_dataset)

    p_met = sub.add_parser("metrics", help="topology metrics of raster images")
    p_met.add_argument("paths", nargs="+")
    p_met.add_argument("--threshold", type=float, default=0.5)
    p_met.add_argument("--levels", default="cantilever",
                       choices=("cantilever", "l-beam"))
    p_met.set_defaults(func=cmd_metrics)

    p_re = sub.add_parser("reanalyze", help="solve a raster design against a problem")
    p_re.add_argument("image")
    p_re.add_argument("--config", required=True)
    p_re.add_argument("--label", type=int, required=True)
    p_re.add_argument("--threshold", type=float, default=0.5)
    p_re.add_argument("--resize-mode", default="stretch", choices=("stretch", "pad"))
    p_re.set_defaults(func=cmd_reanalyze)

    p_sum = sub.add_parser("summarize", help="distribution report of a dataset")
    p_sum.add_argument("dataset_dir")
    p_sum.add_argument("--out", default=None)
    p_sum.set_defaults(func=cmd_summarize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FeaError, GeometryError, ds.DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
