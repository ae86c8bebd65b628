"""Point-wise saliency methods evaluated on one frozen model sample.

Every explainer takes a batch of inputs and returns one attribution map per
input. Image inputs (N, C, H, W) are reduced to (N, H, W) by the maximum
absolute value over channels; tabular attributions stay signed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .uq import ModelSample


class LimeDesignError(np.linalg.LinAlgError):
    """The weighted normal equations of the LIME surrogate are singular."""


@dataclass
class Saliency:
    values: np.ndarray  # (N, H, W) for images, (N, F) for tabular
    method: str
    target: np.ndarray


def reduce_channels(grad: np.ndarray) -> np.ndarray:
    if grad.ndim == 4:
        return np.abs(grad).max(axis=1)
    return grad


def _targets(target, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(target, dtype=np.int64), (n,)).copy()


def input_gradient(sample: ModelSample, x, target=0, rng=None, **_) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    return reduce_channels(sample.input_gradient(x, _targets(target, len(x)), "vanilla"))


def guided_backprop(sample: ModelSample, x, target=0, rng=None, **_) -> np.ndarray:
    """Gradient where every ReLU only passes positive signal through positive units."""
    x = np.asarray(x, dtype=np.float32)
    return reduce_channels(sample.input_gradient(x, _targets(target, len(x)), "guided"))


def integrated_gradients(sample: ModelSample, x, target=0, rng=None, baseline=None,
                         steps: int = 50, chunk: int = 512, reduce: bool = True, **_) -> np.ndarray:
    """Right-endpoint Riemann approximation of integrated gradients.

    ``IG_i = (x_i - x'_i) / m * sum_{k=1..m} dF(x' + k/m (x - x'))/dx_i``; the same
    noise realization is used at every interpolation point.
    """
    if steps < 1:
        raise ValueError("integrated gradients needs at least one step")
    x = np.asarray(x, dtype=np.float32)
    base = np.zeros_like(x) if baseline is None else np.broadcast_to(
        np.asarray(baseline, dtype=np.float32), x.shape)
    if base.shape != x.shape:
        raise ValueError("baseline and input shapes differ")
    n = len(x)
    tgt = _targets(target, n)
    diff = (x - base).astype(np.float64)
    alphas = np.arange(1, steps + 1, dtype=np.float64) / steps
    # rows ordered (input, step)
    total = np.zeros(x.shape, dtype=np.float64)
    all_rows = n * steps
    for s in range(0, all_rows, chunk):
        rows = np.arange(s, min(s + chunk, all_rows))
        b_idx, k_idx = rows // steps, rows % steps
        pts = base[b_idx] + (alphas[k_idx].reshape((-1,) + (1,) * (x.ndim - 1)) * diff[b_idx])
        g = sample.input_gradient(pts.astype(np.float32), tgt[b_idx], "vanilla")
        np.add.at(total, b_idx, g.astype(np.float64))
    ig = diff * total / steps
    return reduce_channels(ig) if reduce else ig


def weighted_least_squares(design: np.ndarray, y: np.ndarray, w: np.ndarray,
                           cond_limit: float = 1e12) -> np.ndarray:
    """Solve (A^T W A) beta = A^T W y, one column of ``y`` per problem.

    Shapes: design (n, p), y (n,) or (n, k), w (n,). Raises LimeDesignError
    when the normal matrix is singular or badly conditioned.
    """
    design = np.asarray(design, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    aw = design * w[:, None]
    normal = aw.T @ design
    cond = np.linalg.cond(normal)
    if not np.isfinite(cond) or cond > cond_limit:
        raise LimeDesignError(
            f"degenerate LIME design: weighted normal matrix {normal.shape[0]}x{normal.shape[1]} "
            f"has condition number {cond:.3g}")
    return np.linalg.solve(normal, aw.T @ y)


def default_kernel_width(n_features: int) -> float:
    return 0.75 * math.sqrt(n_features)


def lime_tabular(sample: ModelSample, x, target=0, rng=None, n_perturbations: int = 500,
                 kernel_width: float | None = None, perturb_sigma: float = 1.0,
                 return_intercept: bool = False, **_) -> np.ndarray:
    """Local weighted-linear surrogate around each input.

    Perturbations are drawn from N(x, perturb_sigma^2 I) in (standardized)
    feature space, weighted by ``exp(-||z - x||^2 / kernel_width^2)``; the
    surrogate slopes are returned as attributions.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2:
        raise ValueError("LIME here is tabular only: expected (N, F) inputs")
    if rng is None:
        raise ValueError("LIME needs an rng")
    n, f = x.shape
    if n_perturbations < f + 1:
        raise ValueError(f"need at least {f + 1} perturbations for {f} features")
    kw = default_kernel_width(f) if kernel_width is None else kernel_width
    # one perturbation design per call, shared by all inputs
    offsets = rng.standard_normal((n_perturbations, f)) * perturb_sigma
    z = (x[:, None, :] + offsets[None].astype(np.float32)).astype(np.float32)
    out = sample.predict(z.reshape(n * n_perturbations, f))
    tgt = _targets(target, n)
    preds = out.reshape(n, n_perturbations, -1)[np.arange(n), :, tgt]
    weights = np.exp(-(offsets ** 2).sum(axis=1) / kw ** 2)
    design = np.concatenate([np.ones((n_perturbations, 1)), offsets], axis=1)
    beta = weighted_least_squares(design, preds.T, weights).T
    if return_intercept:
        return beta
    return beta[:, 1:]


EXPLAINERS = {
    "gradient": input_gradient,
    "gbp": guided_backprop,
    "ig": integrated_gradients,
    "lime": lime_tabular,
}


def get_explainer(name: str):
    try:
        return EXPLAINERS[name]
    except KeyError:
        raise ValueError(f"unknown explainer {name!r}; choose from {sorted(EXPLAINERS)}") from None
