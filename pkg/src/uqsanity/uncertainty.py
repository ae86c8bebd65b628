"""Explanation mean, standard deviation and coefficient of variation."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write_bytes, atomic_write_text
from .explain import get_explainer
from .uq import StochasticModel, sample_seed

CV_EPS = 1e-8


@dataclass
class ExplanationWithUncertainty:
    mean_map: np.ndarray
    std_map: np.ndarray
    cv_map: np.ndarray
    T: int
    method: str
    uq: str
    seed: int
    samples: np.ndarray | None = None  # (T, N, ...) when retained


def reduce_explanations(stack: np.ndarray, eps: float = CV_EPS):
    """Mean, population std and CV over axis 0 of a (T, ...) saliency stack.

    Accumulation runs in ascending sample index.
    """
    stack = np.asarray(stack, dtype=np.float64)
    T = stack.shape[0]
    if T == 0:
        raise ValueError("empty saliency stack")
    if not np.isfinite(stack).all():
        raise FloatingPointError("NaN/Inf in explanation samples")
    acc = np.zeros(stack.shape[1:])
    for s in stack:
        acc += s
    mean = acc / T
    sq = np.zeros_like(mean)
    for s in stack:
        sq += (s - mean) ** 2
    std = np.sqrt(sq / T)
    cv = std / (np.abs(mean) + eps)
    return mean, std, cv


def explain_with_uncertainty(model: StochasticModel, explainer: str, x, T: int | None = None,
                             seed: int = 0, target=0, keep_samples: bool = False,
                             **explainer_kwargs) -> ExplanationWithUncertainty:
    """Run T (posterior sample, explanation) pairs and reduce them.

    Sample ``i`` freezes its noise realization (or ensemble member) for the
    whole explanation; explainer randomness (LIME perturbations) is seeded
    from ``(seed, i)`` as well.
    """
    fn = get_explainer(explainer)
    T = model.resolve_T(T)
    x = np.asarray(x, dtype=np.float32)
    maps = []
    for i in range(T):
        sample = model.draw(i, seed, x.shape)
        rng = np.random.default_rng(sample_seed(seed, i).spawn(1)[0])
        maps.append(np.asarray(fn(sample, x, target=target, rng=rng, **explainer_kwargs),
                               dtype=np.float64))
    stack = np.stack(maps)
    mean, std, cv = reduce_explanations(stack)
    return ExplanationWithUncertainty(mean, std, cv, T, explainer, model.strategy.tag, seed,
                                      stack if keep_samples else None)


def aggregate_sigma(explanations) -> float:
    """Mean over inputs of the per-input mean of ``std_map``."""
    if isinstance(explanations, ExplanationWithUncertainty):
        explanations = [explanations]
    explanations = list(explanations)
    if not explanations:
        raise ValueError("aggregate_sigma needs at least one explanation")
    per_input = []
    shape = None
    for e in explanations:
        std = np.asarray(e.std_map if hasattr(e, "std_map") else e, dtype=np.float64)
        if shape is not None and std.shape[1:] != shape:
            raise ValueError("explanations have inconsistent shapes")
        shape = std.shape[1:]
        per_input.append(std.reshape(len(std), -1).mean(axis=1))
    vals = np.sort(np.concatenate(per_input))
    return float(vals.mean())


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def write_pgm(path, image: np.ndarray) -> tuple[float, float]:
    """Write a 2-D map as 8-bit binary PGM (P5), min-max normalized.

    Returns the (min, max) used; a sidecar ``<path>.txt`` records the mapping.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2-D map")
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + pixels.tobytes())
    atomic_write_text(str(path) + ".txt",
                      f"min {lo!r}\nmax {hi!r}\nmapping value = min + pixel/255 * (max - min)\n")
    return lo, hi


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    # exactly one whitespace byte separates the header from the raster
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    raster = data[m.end():m.end() + w * h]
    if len(raster) != w * h:
        raise ValueError("truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w)


def write_f32(path, arr: np.ndarray) -> None:
    """Raw little-endian float32 dump; shape goes to ``<path>.shape``."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    atomic_write_bytes(path, arr.tobytes())
    atomic_write_text(str(path) + ".shape", " ".join(str(d) for d in arr.shape) + "\n")


def read_f32(path) -> np.ndarray:
    shape = tuple(int(t) for t in Path(str(path) + ".shape").read_text().split())
    return np.fromfile(path, dtype="<f4").reshape(shape)
