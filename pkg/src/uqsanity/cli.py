"""Command-line interface: ``uqsanity <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _converter(annotation: str):
    optional = "None" in annotation
    base = annotation.replace("| None", "").strip()

    def conv(text: str):
        if optional and text.lower() in ("none", "null", ""):
            return None
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "list":
            return [float(t) for t in text.split(",") if t.strip()]
        return text
    return conv


def _add_config_args(p: argparse.ArgumentParser, skip=()) -> None:
    p.add_argument("--config", type=Path, help="flat JSON config; flags override its values")
    g = p.add_argument_group("config overrides")
    for name, f in _FIELDS.items():
        if name in skip:
            continue
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, type=_converter(str(f.type)),
                       default=None, metavar=str(f.type).replace(" ", ""))


def _config_from_args(args, **forced) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {k: getattr(args, k) for k in _FIELDS if getattr(args, k, None) is not None}
    overrides.update(forced)
    return cfg.replace(**overrides).validate()


def cmd_train(args) -> int:
    from .experiment import CheckpointCache, load_dataset
    cfg = _config_from_args(args)
    ds = load_dataset(cfg)
    cache = CheckpointCache(cfg, Path(cfg.output_dir) / "checkpoints")
    model = cache.train(ds.X_train, ds.y_train)
    from .uq import predict_with_uncertainty
    pd = predict_with_uncertainty(model, ds.X_eval, seed=cfg.seed)
    if model.head == "classification":
        score = f"eval accuracy {float((pd.mean.argmax(1) == ds.y_eval).mean()):.4f}"
    else:
        score = f"eval mse {float(np.mean((pd.mean - ds.y_eval) ** 2)):.4f}"
    manifest = cache.directory / f"{cache.key(ds.y_train)}.manifest"
    print(f"{model.strategy.tag}: {score} ({'cached' if cache.hits[0] else 'trained'})")
    print(f"checkpoint manifest: {manifest}")
    return 0


def cmd_explain(args) -> int:
    from .checkpoint import atomic_write_text
    from .experiment import CheckpointCache, load_dataset, resolve_target
    from .uncertainty import aggregate_sigma, explain_with_uncertainty, write_f32, write_pgm
    cfg = _config_from_args(args)
    ds = load_dataset(cfg)
    model = CheckpointCache(cfg, Path(cfg.output_dir) / "checkpoints").train(ds.X_train, ds.y_train)
    e = explain_with_uncertainty(model, cfg.explainer, ds.X_eval, cfg.T, cfg.seed,
                                 resolve_target(cfg, model, ds), **cfg.explainer_kwargs())
    h = cfg.config_hash()[:12]
    out = Path(cfg.output_dir) / f"explain_{cfg.dataset}_{cfg.uq}_{cfg.explainer}_s{cfg.seed}_{h}"
    out.mkdir(parents=True, exist_ok=True)
    for stat in ("mean", "std", "cv"):
        arr = getattr(e, f"{stat}_map")
        write_f32(out / f"{h}_{stat}.f32", arr)
        if arr.ndim == 3:
            for i in range(min(cfg.dump_inputs, len(arr))):
                write_pgm(out / f"{h}_{stat}_{i}.pgm", arr[i])
    atomic_write_text(out / f"config_{h}.json", cfg.to_json())
    print(f"{e.uq} {e.method} T={e.T}: aggregate sigma {aggregate_sigma(e):.6g}")
    print(f"maps written to {out}")
    return 0


def cmd_sanity(args) -> int:
    from .experiment import run_experiment
    cfg = _config_from_args(args, test=args.kind)
    res = run_experiment(cfg)
    print(res.summary_path.read_text(), end="")
    print(f"report: {res.report_path}")
    return 0


def cmd_grid(args) -> int:
    from .experiment import GRID_EXPLAINERS, GRID_TESTS, GRID_UQ, run_grid
    cfg = _config_from_args(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    uqs = args.uqs.split(",") if args.uqs else GRID_UQ
    explainers = args.explainers.split(",") if args.explainers else GRID_EXPLAINERS
    _, path = run_grid(cfg, uqs, explainers, GRID_TESTS, seeds)
    print(path.read_text(), end="")
    print(f"matrix: {path}")
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_reports
    for p in plot_reports(args.csv, args.out, args.format):
        print(p)
    return 0


def cmd_make_data(args) -> int:
    from . import data
    if args.kind == "cifar10":
        path = data.make_synthetic_cifar(args.out, args.n_train, args.n_test, args.seed)
    else:
        path = data.write_housing_csv(args.out, args.n, args.seed)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uqsanity", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train (or load the cached) model for a config")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="explanation mean/std/CV maps on the eval set")
    _add_config_args(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("sanity", help="run a sanity check")
    kinds = p.add_subparsers(dest="kind", required=True)
    for kind in ("weight", "data"):
        k = kinds.add_parser(kind, help=f"{kind} randomization test")
        _add_config_args(k, skip=("test",))
        k.set_defaults(func=cmd_sanity)

    p = sub.add_parser("grid", help="UQ x explainer x test verdict matrix")
    _add_config_args(p)
    p.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    p.add_argument("--uqs", help="comma-separated UQ methods")
    p.add_argument("--explainers", help="comma-separated explainers")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("plot", help="charts from report CSVs")
    p.add_argument("csv", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=Path("plots"))
    p.add_argument("--format", default="png", choices=["png", "svg", "pdf"])
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("make-data", help="write synthetic stand-in datasets in the real formats")
    p.add_argument("kind", choices=["cifar10", "housing"])
    p.add_argument("out", type=Path)
    p.add_argument("--n", type=int, default=20640, help="housing rows")
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        from .experiment import ExperimentError
        from .plotting import ReportSchemaError
        if isinstance(e, (ExperimentError, ReportSchemaError, FileNotFoundError)):
            print(f"error: {e}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
