"""Stochastic predictors built on top of :mod:`uqsanity.nn`.

A :class:`StochasticModel` hands out :class:`ModelSample` objects: one frozen
posterior sample each (a dropout/dropconnect mask, a Flipout weight draw, or an
ensemble member) that can be evaluated and differentiated at any input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import (Conv2D, Dense, DropConnectDense, Dropout, Flatten, FlipoutDense,
                 Network, ReLU, TrainConfig)

STRATEGIES = ("dropout", "dropconnect", "flipout", "ensemble", "none")

DEFAULT_T = {"dropout": 20, "dropconnect": 20, "flipout": 20, "ensemble": 5, "none": 1}


@dataclass(frozen=True)
class UQStrategy:
    kind: str
    p: float = 0.5
    members: int = 5
    prior_mu: float = 0.0
    prior_sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown UQ strategy {self.kind!r}")
        if self.kind == "ensemble" and self.members < 1:
            raise ValueError("ensemble needs at least one member")

    @property
    def tag(self) -> str:
        if self.kind in ("dropout", "dropconnect"):
            return f"{self.kind}(p={self.p})"
        if self.kind == "ensemble":
            return f"ensemble({self.members})"
        return self.kind


def sample_seed(base_seed: int, i: int) -> np.random.SeedSequence:
    """Per-sample seed; adding samples never reshuffles earlier ones."""
    return np.random.SeedSequence([int(base_seed), int(i)])


# ---------------------------------------------------------------------------
# Architectures
# ---------------------------------------------------------------------------


def _head_block(strategy: UQStrategy, n_in: int, n_out: int) -> list:
    """Last hidden->output block carrying the UQ layer."""
    if strategy.kind == "dropout":
        return [Dropout(strategy.p), Dense(n_in, n_out)]
    if strategy.kind == "dropconnect":
        return [DropConnectDense(n_in, n_out, strategy.p)]
    if strategy.kind == "flipout":
        return [FlipoutDense(n_in, n_out, strategy.prior_mu, strategy.prior_sigma)]
    return [Dense(n_in, n_out)]


def tabular_mlp(strategy: UQStrategy, n_features: int = 8, hidden: int = 8) -> list:
    """Four fully connected layers (8-8-8-1); UQ on the last layer only."""
    return [
        Dense(n_features, hidden), ReLU(),
        Dense(hidden, hidden), ReLU(),
        Dense(hidden, hidden), ReLU(),
        *_head_block(strategy, hidden, 1),
    ]


def cifar_cnn(strategy: UQStrategy, n_classes: int = 10, in_channels: int = 3,
              size: int = 32) -> list:
    """Small CNN with five parameterized layers.

    conv3x3(16) - conv3x3/2(16) - conv3x3/2(32) - dense(64) - [dropout] - dense(10)
    """
    h = size - 2
    h = (h - 3) // 2 + 1
    h = (h - 3) // 2 + 1
    flat = 32 * h * h
    layers = [
        Conv2D(in_channels, 16, 3), ReLU(),
        Conv2D(16, 16, 3, stride=2), ReLU(),
        Conv2D(16, 32, 3, stride=2), ReLU(),
        Flatten(),
    ]
    if strategy.kind == "dropout":
        layers += [Dense(flat, 64), Dropout(strategy.p), ReLU(), Dense(64, n_classes)]
    elif strategy.kind == "dropconnect":
        layers += [Dense(flat, 64), ReLU(), DropConnectDense(64, n_classes, strategy.p)]
    elif strategy.kind == "flipout":
        layers += [Dense(flat, 64), ReLU(),
                   FlipoutDense(64, n_classes, strategy.prior_mu, strategy.prior_sigma)]
    else:
        layers += [Dense(flat, 64), ReLU(), Dense(64, n_classes)]
    return layers


def linear_model(strategy: UQStrategy, n_features: int = 1) -> list:
    return _head_block(strategy, n_features, 1)


ARCHITECTURES = {"mlp": tabular_mlp, "cnn": cifar_cnn, "linear": linear_model}


def build_network(arch: str, strategy: UQStrategy, seed: int, **kwargs) -> Network:
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}")
    head = "classification" if arch == "cnn" else "regression"
    return Network(ARCHITECTURES[arch](strategy, **kwargs), head=head, seed=seed)


# ---------------------------------------------------------------------------
# Stochastic model
# ---------------------------------------------------------------------------


@dataclass
class ModelSample:
    """One frozen posterior sample: a network plus a fixed noise realization."""

    net: Network
    noise: list | None
    index: int

    @property
    def mode(self) -> str:
        return "eval" if self.noise is None else "stochastic"

    def forward(self, x):
        return self.net.forward(x, self.mode, None, self.noise)

    def predict(self, x, batch_size: int = 4096) -> np.ndarray:
        outs = [self.forward(x[s:s + batch_size])[0] for s in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def input_gradient(self, x, target=0, rule: str = "vanilla") -> np.ndarray:
        _, tape = self.forward(x)
        return nn.backward_to_input(self.net, tape, target, rule)


@dataclass
class StochasticModel:
    networks: list[Network]
    strategy: UQStrategy
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.networks:
            raise ValueError("a stochastic model needs at least one network")
        archs = {n.architecture_hash() for n in self.networks}
        if len(archs) != 1:
            raise ValueError("ensemble members must share an architecture")
        kind = self.strategy.kind
        net = self.networks[0]
        if kind == "dropout" and not any(isinstance(l, Dropout) for l in net.layers):
            raise ValueError("MC-Dropout needs at least one Dropout layer")
        if kind == "dropconnect" and not any(isinstance(l, DropConnectDense) for l in net.layers):
            raise ValueError("MC-DropConnect needs at least one DropConnectDense layer")
        if kind == "flipout" and not any(isinstance(l, FlipoutDense) for l in net.layers):
            raise ValueError("Flipout needs at least one FlipoutDense layer")

    @property
    def is_ensemble(self) -> bool:
        return self.strategy.kind == "ensemble"

    @property
    def head(self) -> str:
        return self.networks[0].head

    @property
    def default_T(self) -> int:
        return len(self.networks) if self.is_ensemble else DEFAULT_T[self.strategy.kind]

    def resolve_T(self, T: int | None) -> int:
        if self.is_ensemble:
            if T is not None and T != len(self.networks):
                raise ValueError(f"ensemble T is fixed to its {len(self.networks)} members")
            return len(self.networks)
        T = self.default_T if T is None else T
        if T < 1:
            raise ValueError("T must be at least 1")
        return T

    def draw(self, i: int, seed: int, input_shape) -> ModelSample:
        if self.is_ensemble:
            if not 0 <= i < len(self.networks):
                raise IndexError(f"ensemble member {i} out of range")
            return ModelSample(self.networks[i], None, i)
        net = self.networks[0]
        if not net.is_stochastic or self.strategy.kind == "none":
            return ModelSample(net, None, i)
        rng = np.random.default_rng(sample_seed(seed, i))
        return ModelSample(net, net.sample_noise(rng, input_shape), i)

    def map_networks(self, fn) -> "StochasticModel":
        return StochasticModel([fn(k, n) for k, n in enumerate(self.networks)], self.strategy,
                               dict(self.meta))

    def params_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for n in self.networks:
            h.update(n.params_hash().encode())
        return h.hexdigest()


def sample_pass(model: StochasticModel, x, i: int, seed: int):
    """Forward pass of posterior sample ``i``; returns ``(prediction, tape)``."""
    x = np.asarray(x)
    return model.draw(i, seed, x.shape).forward(x)


@dataclass
class PredictiveDistribution:
    mean: np.ndarray
    variance: np.ndarray
    T: int
    samples: np.ndarray | None = None


def moments(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population variance (divisor T) over axis 0, reduced in index order."""
    samples = np.asarray(samples, dtype=np.float64)
    T = samples.shape[0]
    if T == 0:
        raise ValueError("need at least one sample")
    acc = np.zeros(samples.shape[1:])
    for s in samples:
        acc += s
    mean = acc / T
    sq = np.zeros_like(mean)
    for s in samples:
        sq += (s - mean) ** 2
    return mean, sq / T


def predict_with_uncertainty(model: StochasticModel, x, T: int | None = None, seed: int = 0,
                             keep_samples: bool = False) -> PredictiveDistribution:
    """Predictive mean and variance over ``T`` posterior samples.

    Classification averages post-softmax probability vectors.
    """
    if T is not None and T < 1:
        raise ValueError("T must be at least 1")
    T = model.resolve_T(T)
    x = np.asarray(x)
    outs = []
    for i in range(T):
        y = model.draw(i, seed, x.shape).predict(x)
        if model.head == "classification":
            y = nn.softmax(y.astype(np.float64))
        outs.append(y)
    stack = np.stack(outs)
    mean, var = moments(stack)
    return PredictiveDistribution(mean, var, T, stack if keep_samples else None)


def train_uq(X, y, arch: str, strategy: UQStrategy, cfg: TrainConfig, seed: int = 0,
             **arch_kwargs) -> tuple[StochasticModel, list]:
    """Train a stochastic model. Ensembles differ only in their init seed."""
    if strategy.kind == "ensemble":
        nets, histories = [], []
        for k in range(strategy.members):
            net = build_network(arch, strategy, seed=int(
                np.random.SeedSequence([seed, 1000 + k]).generate_state(1)[0]), **arch_kwargs)
            trained, hist = nn.train(net, X, y, cfg)
            nets.append(trained)
            histories.append(hist)
        return StochasticModel(nets, strategy), histories
    net = build_network(arch, strategy, seed=seed, **arch_kwargs)
    trained, hist = nn.train(net, X, y, cfg)
    return StochasticModel([trained], strategy), [hist]
