"""Weight- and label-randomization sanity checks for explanation uncertainty."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .metrics import mean_ssim, spearman, vector_similarity
from .nn import reinitialize_layer
from .uncertainty import ExplanationWithUncertainty, aggregate_sigma, explain_with_uncertainty
from .uq import StochasticModel

STAGE_FRACTIONS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
CSV_COLUMNS = ["test", "uq", "explainer", "dataset", "stage_fraction", "metric_name",
               "metric_value", "seed"]


class IncompleteMetricsError(ValueError):
    pass


@dataclass(frozen=True)
class RandomizationStage:
    fraction: float
    randomized_layer_indices: tuple[int, ...]
    effective_fraction: float

    @property
    def snapped(self) -> bool:
        return not math.isclose(self.fraction, self.effective_fraction)


def randomization_stages(net, fractions=STAGE_FRACTIONS) -> list[RandomizationStage]:
    """Cumulative input-to-output stages over parameterized layers.

    When the layer count is not a multiple of the stage granularity each
    fraction snaps to the nearest achievable one (round half up).
    """
    params = net.parameterized_indices
    n = len(params)
    if n == 0:
        raise ValueError("network has no parameterized layers to randomize")
    stages = []
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"stage fraction {f} outside [0, 1]")
        count = int(math.floor(f * n + 0.5))
        stages.append(RandomizationStage(float(f), tuple(params[:count]), count / n))
    for prev, cur in zip(stages, stages[1:]):
        if not set(prev.randomized_layer_indices) <= set(cur.randomized_layer_indices):
            raise ValueError("stage fractions must be non-decreasing")
    return stages


@dataclass
class VerdictRules:
    rho_threshold: float = 0.6
    sigma_margin: float = 0.10
    ssim_final_max: float = 0.8
    ssim_data_max: float = 0.95


def decide_verdict(test: str, modality: str, metrics: dict, rules: VerdictRules = VerdictRules()) -> str:
    """Apply the threshold rules to completed metrics; returns "pass" or "fail".

    weight/tabular: ``aggregate_sigma`` per stage; pass iff Spearman(stage, sigma)
        >= rho_threshold (undefined counts as fail) and the final stage exceeds
        stage 0 by at least ``sigma_margin`` (relative).
    weight/image: ``mean_ssim`` and ``std_ssim`` per stage; pass iff both end
        below their stage-0 value and the final mean SSIM < ssim_final_max.
    data/tabular: ``sigma_true`` and ``sigma_random``; pass iff random exceeds
        true by at least ``sigma_margin`` (relative).
    data/image: ``mean_ssim`` and ``std_ssim``; pass iff both < ssim_data_max.
    """
    def need(*keys):
        for k in keys:
            v = metrics.get(k)
            if v is None or (np.ndim(v) == 0 and not np.isfinite(v)) or \
                    (np.ndim(v) > 0 and (len(v) == 0 or not np.isfinite(v).all())):
                raise IncompleteMetricsError(f"missing or non-finite metric {k!r}")
        return [metrics[k] for k in keys]

    if test == "weight" and modality == "tabular":
        (sig,) = need("aggregate_sigma")
        sig = np.asarray(sig, dtype=np.float64)
        if len(sig) < 3:
            raise IncompleteMetricsError("need at least 3 stages")
        rho = spearman(np.arange(len(sig)), sig)
        ok = (not rho.undefined and rho.value >= rules.rho_threshold
              and sig[-1] >= sig[0] * (1.0 + rules.sigma_margin) and sig[-1] > sig[0])
        return "pass" if ok else "fail"
    if test == "weight" and modality == "image":
        mean, std = (np.asarray(v, dtype=np.float64) for v in need("mean_ssim", "std_ssim"))
        ok = mean[-1] < mean[0] and std[-1] < std[0] and mean[-1] < rules.ssim_final_max
        return "pass" if ok else "fail"
    if test == "data" and modality == "tabular":
        s_true, s_rand = (float(v) for v in need("sigma_true", "sigma_random"))
        ok = s_rand >= s_true * (1.0 + rules.sigma_margin) and s_rand > s_true
        return "pass" if ok else "fail"
    if test == "data" and modality == "image":
        m, s = (float(v) for v in need("mean_ssim", "std_ssim"))
        return "pass" if (m < rules.ssim_data_max and s < rules.ssim_data_max) else "fail"
    raise ValueError(f"unknown test/modality {test}/{modality}")


@dataclass
class SanityReport:
    test: str
    modality: str
    uq: str
    explainer: str
    dataset: str
    seed: int
    T: int
    rules: VerdictRules
    metrics: dict
    stage_labels: list
    verdict: str = "fail"
    meta: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def rows(self) -> list[list[str]]:
        base = [self.test, self.uq, self.explainer, self.dataset]
        out = []
        metric_names = [k for k in self.metrics if np.ndim(self.metrics[k]) > 0]
        for s, label in enumerate(self.stage_labels):
            for name in metric_names:
                out.append(base + [label, name, _fmt(self.metrics[name][s]), str(self.seed)])
            for name, values in self.diagnostics.items():
                out.append(base + [label, name, _fmt(values[s]), str(self.seed)])
        for name, value in self.metrics.items():
            if np.ndim(value) == 0:
                out.append(base + [self._scalar_label(name), name, _fmt(value), str(self.seed)])
        for name, value in asdict(self.rules).items():
            out.append(base + ["meta", f"rule.{name}", _fmt(value), str(self.seed)])
        for name, value in self.meta.items():
            out.append(base + ["meta", name, value if isinstance(value, str) else _fmt(value),
                               str(self.seed)])
        out.append(base + ["summary", "verdict", self.verdict, str(self.seed)])
        return out

    def _scalar_label(self, name: str) -> str:
        if self.test != "data":
            return "all"
        return {"sigma_true": "true_labels", "sigma_random": "random_labels"}.get(name, "random_vs_true")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(self.rows())
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _image_like(x: np.ndarray) -> bool:
    return np.asarray(x).ndim == 4


def randomize_model(model: StochasticModel, layer_indices, seed: int) -> StochasticModel:
    """Reinitialize ``layer_indices`` in every network.

    Each (member, layer) pair draws from its own stream, so a layer keeps the
    same random weights across cumulative stages and members are randomized
    independently.
    """
    def fn(member, net):
        for li in layer_indices:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7717, member, li]))
            net = reinitialize_layer(net, li, rng)
        return net
    return model.map_networks(fn)


def weight_randomization_test(model: StochasticModel, explainer: str, X_eval, T: int | None = None,
                              seed: int = 0, target=0, rules: VerdictRules = VerdictRules(),
                              dataset: str = "", fractions=STAGE_FRACTIONS,
                              explainer_kwargs: dict | None = None,
                              keep_explanations: bool = False) -> SanityReport:
    """Progressive cumulative randomization, input layers first."""
    X_eval = np.asarray(X_eval, dtype=np.float32)
    if len(X_eval) == 0:
        raise ValueError("empty evaluation set")
    kwargs = dict(explainer_kwargs or {})
    modality = "image" if _image_like(X_eval) else "tabular"
    stages = randomization_stages(model.networks[0], fractions)
    T = model.resolve_T(T)
    trained_hash = model.params_hash()

    explanations: list[ExplanationWithUncertainty] = []
    stage_hashes = []
    for stage in stages:
        m = randomize_model(model, stage.randomized_layer_indices, seed) \
            if stage.randomized_layer_indices else model
        stage_hashes.append(m.params_hash())
        if explanations and stage.randomized_layer_indices == stages[len(explanations) - 1].randomized_layer_indices:
            explanations.append(explanations[-1])
            continue
        explanations.append(explain_with_uncertainty(m, explainer, X_eval, T, seed, target, **kwargs))

    base = explanations[0]
    metrics: dict = {}
    diagnostics: dict = {}
    if modality == "image":
        metrics["mean_ssim"] = [mean_ssim(base.mean_map, e.mean_map) for e in explanations]
        metrics["std_ssim"] = [mean_ssim(base.std_map, e.std_map) for e in explanations]
        diagnostics["aggregate_sigma"] = [aggregate_sigma([e]) for e in explanations]
    else:
        metrics["aggregate_sigma"] = [aggregate_sigma([e]) for e in explanations]
        diagnostics["mean_cosine_vs_stage0"] = [
            float(np.mean([vector_similarity(a, b).value for a, b in zip(base.mean_map, e.mean_map)]))
            for e in explanations]
        rho = spearman(np.arange(len(stages)), metrics["aggregate_sigma"])
        metrics["spearman_rho"] = rho.value
        metrics["spearman_undefined"] = rho.undefined

    report = SanityReport("weight", modality, model.strategy.tag, explainer, dataset, seed, T, rules,
                          metrics, [_fmt(s.fraction) for s in stages], diagnostics=diagnostics)
    report.verdict = decide_verdict("weight", modality, metrics, rules)
    report.meta.update({
        "baseline_integrity": "ok" if stage_hashes[0] == trained_hash else "MISMATCH",
        "trained_model_hash": trained_hash[:16],
        "thresholds": "artifact decision (not quantified by the source method)",
        "saliency_sign": "channel-max |value|" if modality == "image" else "signed",
    })
    for s in stages:
        report.meta[f"stage_layers@{_fmt(s.fraction)}"] = " ".join(map(str, s.randomized_layer_indices)) or "-"
        if s.snapped:
            report.meta[f"snapped_fraction@{_fmt(s.fraction)}"] = s.effective_fraction
    if keep_explanations:
        report.explanations = explanations
    return report


def permute_labels(y, rng: np.random.Generator, n_classes: int | None = None):
    """Random permutation of targets (regression) or uniform relabel (classification)."""
    y = np.asarray(y)
    if n_classes is not None:
        return rng.integers(0, n_classes, size=y.shape).astype(y.dtype)
    return y[rng.permutation(len(y))]


def config_hash(obj) -> str:
    return hashlib.sha256(repr(obj).encode()).hexdigest()


def data_randomization_test(train_fn: Callable, explainer: str, X_train, y_train, X_eval,
                            T: int | None = None, seed: int = 0, target=0,
                            rules: VerdictRules = VerdictRules(), dataset: str = "",
                            n_classes: int | None = None, randomize: Callable | None = None,
                            train_config=None, explainer_kwargs: dict | None = None,
                            models: tuple | None = None, keep_explanations: bool = False) -> SanityReport:
    """Twin training on true and randomized labels, then compare explanations.

    ``train_fn(X, y) -> StochasticModel`` must be deterministic; both twins go
    through the same call, so only the label vector differs. ``models`` may
    supply already-trained twins (true, random).
    """
    X_eval = np.asarray(X_eval, dtype=np.float32)
    kwargs = dict(explainer_kwargs or {})
    modality = "image" if _image_like(X_eval) else "tabular"
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 4242]))
    y_rand = randomize(y_train, rng) if randomize is not None else permute_labels(y_train, rng, n_classes)
    if models is None:
        m_true = train_fn(X_train, y_train)
        m_rand = train_fn(X_train, y_rand)
    else:
        m_true, m_rand = models
    T_true = m_true.resolve_T(T)
    e_true = explain_with_uncertainty(m_true, explainer, X_eval, T_true, seed, target, **kwargs)
    e_rand = explain_with_uncertainty(m_rand, explainer, X_eval, m_rand.resolve_T(T), seed, target, **kwargs)

    metrics: dict = {}
    diagnostics: dict = {}
    if modality == "image":
        metrics["mean_ssim"] = mean_ssim(e_true.mean_map, e_rand.mean_map)
        metrics["std_ssim"] = mean_ssim(e_true.std_map, e_rand.std_map)
        metrics["sigma_true"] = aggregate_sigma([e_true])
        metrics["sigma_random"] = aggregate_sigma([e_rand])
    else:
        metrics["sigma_true"] = aggregate_sigma([e_true])
        metrics["sigma_random"] = aggregate_sigma([e_rand])
        metrics["sigma_ratio"] = metrics["sigma_random"] / metrics["sigma_true"] \
            if metrics["sigma_true"] > 0 else float("inf")
        metrics["mean_cosine_true_vs_random"] = float(np.mean(
            [vector_similarity(a, b).value for a, b in zip(e_true.mean_map, e_rand.mean_map)]))

    report = SanityReport("data", modality, m_true.strategy.tag, explainer, dataset, seed, T_true,
                          rules, metrics, [], diagnostics=diagnostics)
    report.verdict = decide_verdict("data", modality, metrics, rules)
    label_equal = bool(np.array_equal(np.asarray(y_train), np.asarray(y_rand)))
    report.meta.update({
        "thresholds": "artifact decision (not quantified by the source method)",
        "train_config_hash": config_hash(train_config)[:16],
        "labels_identical": "true" if label_equal else "false",
        "true_model_hash": m_true.params_hash()[:16],
        "random_model_hash": m_rand.params_hash()[:16],
    })
    if keep_explanations:
        report.explanations = (e_true, e_rand)
    report.models = (m_true, m_rand)
    return report
