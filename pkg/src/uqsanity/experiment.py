"""End-to-end experiment runner with a checkpoint cache and on-disk artifacts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, data, sanity
from .config import ExperimentConfig
from .plotting import describe_report, parse_report_csv
from .uncertainty import write_f32, write_pgm
from .uq import StochasticModel, predict_with_uncertainty, train_uq

log = logging.getLogger(__name__)

SCALE_NOTE = "desk-scale reproduction"


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"stage {stage!r} failed: {type(err).__name__}: {err}")
        self.stage = stage


@dataclass
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_eval: np.ndarray
    y_eval: np.ndarray
    n_classes: int | None


@dataclass
class ExperimentResult:
    config_hash: str
    verdict: str
    report_path: Path
    summary_path: Path
    cache_hits: list = field(default_factory=list)
    report: object = None


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "cifar10":
        sp = data.load_cifar10(cfg.data_path, cfg.subset_train, cfg.subset_eval, seed=cfg.seed)
        n_eval = cfg.eval_size if cfg.eval_size is not None else 256
        return Dataset(sp.X_train, sp.y_train, sp.X_test[:n_eval], sp.y_test[:n_eval], 10)
    if cfg.dataset == "housing":
        sp = data.load_tabular_csv(cfg.data_path, cfg.target_column, cfg.test_fraction, seed=cfg.seed)
        n_eval = cfg.eval_size if cfg.eval_size is not None else len(sp.X_test)
        return Dataset(sp.X_train, sp.y_train, sp.X_test[:n_eval], sp.y_test[:n_eval], None)
    X, y = data.synthetic_linear(cfg.linear_n, cfg.linear_weights, cfg.linear_noise, cfg.seed)
    n_test = max(1, int(round(cfg.test_fraction * len(X))))
    n_eval = cfg.eval_size if cfg.eval_size is not None else n_test
    return Dataset(X[n_test:], y[n_test:], X[:n_test][:n_eval], y[:n_test][:n_eval], None)


def _label_hash(y) -> str:
    y = np.ascontiguousarray(y)
    return hashlib.sha256(str(y.dtype).encode() + str(y.shape).encode() + y.tobytes()).hexdigest()


class CheckpointCache:
    """Trained models keyed by (training-config hash, label vector hash)."""

    def __init__(self, cfg: ExperimentConfig, directory: Path):
        self.cfg = cfg
        self.directory = Path(directory)
        self.hits: list[bool] = []

    def key(self, y) -> str:
        return hashlib.sha256((self.cfg.training_hash() + _label_hash(y)).encode()).hexdigest()[:32]

    def train(self, X, y) -> StochasticModel:
        key = self.key(y)
        manifest = self.directory / f"{key}.manifest"
        if manifest.exists():
            self.hits.append(True)
            log.info("checkpoint cache hit %s", key)
            return StochasticModel(checkpoint.load_ensemble(manifest), self.cfg.strategy)
        self.hits.append(False)
        log.info("training %s (%s)", self.cfg.strategy.tag, key)
        model, _ = train_uq(X, y, self.cfg.resolved_arch, self.cfg.strategy, self.cfg.train_config(),
                            seed=self.cfg.seed, **_arch_kwargs(self.cfg, X))
        checkpoint.save_ensemble(model.networks, self.directory, stem=key)
        return model


def _arch_kwargs(cfg: ExperimentConfig, X) -> dict:
    if cfg.resolved_arch in ("mlp", "linear"):
        return {"n_features": int(X.shape[1])}
    return {}


def resolve_target(cfg: ExperimentConfig, model: StochasticModel, ds: Dataset):
    if model.head != "classification":
        return 0
    if cfg.target == "label":
        return np.asarray(ds.y_eval)
    if cfg.target == "predicted":
        pd = predict_with_uncertainty(model, ds.X_eval, seed=cfg.seed)
        return pd.mean.argmax(axis=1)
    return int(cfg.target)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ExperimentError:
        raise
    except Exception as e:  # surfaced with the failing stage
        raise ExperimentError(name, e) from e


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg = cfg.validate()
    h = cfg.config_hash()
    root = Path(cfg.output_dir)
    out = root / cfg.tag
    out.mkdir(parents=True, exist_ok=True)
    cache = CheckpointCache(cfg, root / "checkpoints")

    ds = _stage("load-data", load_dataset, cfg)
    model = _stage("train", cache.train, ds.X_train, ds.y_train)
    target = resolve_target(cfg, model, ds)
    kwargs = cfg.explainer_kwargs()
    T = cfg.T
    if cfg.test == "weight":
        report = _stage("weight-randomization", sanity.weight_randomization_test, model,
                        cfg.explainer, ds.X_eval, T, cfg.seed, target, cfg.rules, cfg.dataset,
                        explainer_kwargs=kwargs, keep_explanations=True)
    else:
        report = _stage("data-randomization", sanity.data_randomization_test, cache.train,
                        cfg.explainer, ds.X_train, ds.y_train, ds.X_eval, T, cfg.seed, target,
                        cfg.rules, cfg.dataset, n_classes=ds.n_classes,
                        train_config=cfg.training_hash(), explainer_kwargs=kwargs,
                        models=(model, cache.train(ds.X_train, _random_labels(cfg, ds))),
                        keep_explanations=True)
    report.meta["config_hash"] = h
    report.meta["scale"] = SCALE_NOTE

    csv_text = report.to_csv()
    report_path = out / f"report_{h[:12]}.csv"
    checkpoint.atomic_write_text(report_path, csv_text)
    checkpoint.atomic_write_text(out / f"config_{h[:12]}.json", cfg.to_json())
    desc = describe_report(parse_report_csv(io.StringIO(csv_text)))
    desc["config_hash"] = h
    checkpoint.atomic_write_text(out / f"plot_{h[:12]}.json",
                                 json.dumps(desc, indent=2, sort_keys=True) + "\n")
    _stage("export", _dump_explanations, report, out, h, cfg.dump_inputs)
    summary_path = out / f"summary_{h[:12]}.txt"
    checkpoint.atomic_write_text(summary_path, summary_text(cfg, report, ds))
    log.info("%s -> %s", cfg.tag, report.verdict)
    return ExperimentResult(h, report.verdict, report_path, summary_path, list(cache.hits), report)


def _random_labels(cfg: ExperimentConfig, ds: Dataset):
    # same stream the data test derives internally
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 4242]))
    return sanity.permute_labels(ds.y_train, rng, ds.n_classes)


def _dump_explanations(report, out: Path, h: str, n_inputs: int) -> None:
    exps = getattr(report, "explanations", None)
    if exps is None:
        return
    if report.test == "weight":
        labelled = [(f"stage{label}", e) for label, e in zip(report.stage_labels, exps)]
    else:
        labelled = [("true", exps[0]), ("random", exps[1])]
    sal = out / "saliency"
    sal.mkdir(exist_ok=True)
    for name, e in labelled:
        for stat in ("mean", "std", "cv"):
            arr = getattr(e, f"{stat}_map")
            write_f32(sal / f"{h[:12]}_{name}_{stat}.f32", arr)
            if arr.ndim == 3:
                for i in range(min(n_inputs, len(arr))):
                    write_pgm(sal / f"{h[:12]}_{name}_{stat}_{i}.pgm", arr[i])


def summary_text(cfg: ExperimentConfig, report, ds: Dataset) -> str:
    lines = [
        f"# {SCALE_NOTE}",
        f"config_hash   {cfg.config_hash()}",
        f"test          {report.test} ({report.modality})",
        f"dataset       {cfg.dataset}  train={len(ds.X_train)} eval={len(ds.X_eval)}",
        f"uq            {report.uq}  T={report.T}",
        f"explainer     {cfg.explainer}  {json.dumps(cfg.explainer_kwargs(), sort_keys=True)}",
        f"training      arch={cfg.resolved_arch} epochs={cfg.resolved_epochs} "
        f"lr={cfg.resolved_learning_rate} batch={cfg.batch_size} optimizer={cfg.optimizer}",
        f"seed          {cfg.seed}",
        "",
        "metrics:",
    ]
    for name, value in report.metrics.items():
        if np.ndim(value) > 0:
            vals = ", ".join(f"{s}={float(v):.4f}" for s, v in zip(report.stage_labels, value))
            lines.append(f"  {name}: {vals}")
        else:
            lines.append(f"  {name}: {sanity._fmt(value)}")
    for name, values in report.diagnostics.items():
        vals = ", ".join(f"{s}={float(v):.4f}" for s, v in zip(report.stage_labels, values))
        lines.append(f"  {name} (diagnostic): {vals}")
    r = cfg.rules
    lines += [
        "",
        "thresholds (artifact decisions, not quantified by the source method):",
        f"  rho_threshold={r.rho_threshold} sigma_margin={r.sigma_margin} "
        f"ssim_final_max={r.ssim_final_max} ssim_data_max={r.ssim_data_max}",
        "",
        f"VERDICT: {report.verdict.upper()}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

GRID_UQ = ("dropout", "dropconnect", "flipout", "ensemble")
GRID_EXPLAINERS = ("gbp", "lime")
GRID_TESTS = ("weight", "data")


@dataclass
class GridCell:
    uq: str
    explainer: str
    test: str
    seed: int
    verdict: str
    config_hash: str


def grid_configs(base: ExperimentConfig, uqs=GRID_UQ, explainers=GRID_EXPLAINERS,
                 tests=GRID_TESTS, seeds=(0,)) -> list[ExperimentConfig]:
    # cells sharing a model run back to back so the cache is warm
    return [base.replace(uq=u, explainer=e, test=t, seed=s)
            for s in seeds for u in uqs for t in tests for e in explainers]


def _run_cell(cfg: ExperimentConfig) -> GridCell:
    res = run_experiment(cfg)
    return GridCell(cfg.uq, cfg.explainer, cfg.test, cfg.seed, res.verdict, res.config_hash)


def run_grid(base: ExperimentConfig, uqs=GRID_UQ, explainers=GRID_EXPLAINERS, tests=GRID_TESTS,
             seeds=(0,), workers: int | None = None) -> tuple[list[GridCell], Path]:
    """Run every (uq, explainer, test, seed) cell; writes a pass/fail matrix."""
    configs = grid_configs(base, uqs, explainers, tests, seeds)
    workers = base.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell, configs))
    else:
        cells = [_run_cell(c) for c in configs]
    gh = hashlib.sha256("".join(c.config_hash for c in cells).encode()).hexdigest()[:12]
    out = Path(base.output_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["uq", "explainer", "test", "seed", "verdict", "config_hash"])
    for c in cells:
        w.writerow([c.uq, c.explainer, c.test, c.seed, c.verdict, c.config_hash])
    checkpoint.atomic_write_text(out / f"grid_{gh}.csv", buf.getvalue())
    table = summary_matrix(cells, uqs, explainers, tests)
    path = out / f"grid_{gh}.txt"
    checkpoint.atomic_write_text(path, f"# {SCALE_NOTE}, dataset={base.dataset}\n{table}")
    return cells, path


def summary_matrix(cells, uqs=GRID_UQ, explainers=GRID_EXPLAINERS, tests=GRID_TESTS) -> str:
    """Rows: UQ method. Columns: (test, explainer). Entries: pass count / seeds."""
    cols = [(t, e) for t in tests for e in explainers]
    header = ["UQ method"] + [f"{t} {e.upper()}" for t, e in cols]
    rows = [header]
    for u in uqs:
        row = [u]
        for t, e in cols:
            vs = [c.verdict for c in cells if (c.uq, c.test, c.explainer) == (u, t, e)]
            if not vs:
                row.append("-")
            elif len(vs) == 1:
                row.append(vs[0])
            else:
                row.append(f"{sum(v == 'pass' for v in vs)}/{len(vs)} pass")
        rows.append(row)
    widths = [max(len(r[k]) for r in rows) for k in range(len(header))]
    return "\n".join("  ".join(c.ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in rows) + "\n"
