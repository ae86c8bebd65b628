"""Flat JSON experiment configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .explain import EXPLAINERS
from .nn import TrainConfig
from .sanity import VerdictRules
from .uq import STRATEGIES, UQStrategy

DATASETS = ("cifar10", "housing", "synthetic-linear")
DEFAULT_ARCH = {"cifar10": "cnn", "housing": "mlp", "synthetic-linear": "linear"}

# Chosen by validation MSE of the predictive mean on a split carved from the
# housing training data (100 epochs, batch 32).
HOUSING_LR = {"ensemble": 0.005, "dropout": 0.01}

# Keys that never influence results; excluded from the config hash.
_NOT_HASHED = ("output_dir", "workers")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # dataset
    dataset: str = "housing"
    data_path: str = ""
    target_column: str = "MedHouseVal"
    test_fraction: float = 0.2
    subset_train: int | None = 5000
    subset_eval: int | None = 1000
    eval_size: int | None = None
    linear_n: int = 200
    linear_weights: list = field(default_factory=lambda: [2.0, -1.0, 0.5])
    linear_noise: float = 0.1
    # model
    arch: str = "auto"
    uq: str = "ensemble"
    p: float = 0.5
    members: int = 5
    prior_mu: float = 0.0
    prior_sigma: float = 1.0
    # training
    epochs: int | None = None
    batch_size: int = 32
    learning_rate: float | None = None
    optimizer: str = "momentum"
    momentum: float = 0.9
    # explanation
    explainer: str = "gbp"
    T: int | None = None
    ig_steps: int = 50
    lime_samples: int = 500
    lime_kernel_width: float | None = None
    lime_sigma: float = 1.0
    target: str = "label"
    # sanity test
    test: str = "weight"
    seed: int = 0
    rho_threshold: float = 0.6
    sigma_margin: float = 0.10
    ssim_final_max: float = 0.8
    ssim_data_max: float = 0.95
    # bookkeeping
    dump_inputs: int = 4
    output_dir: str = "runs"
    workers: int = 1

    # ----------------------------------------------------------------- io
    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        for k, v in data.items():
            if isinstance(v, dict):
                raise ConfigError(f"{path}: key {k!r} is nested; the config is flat")
        return cls.from_dict(data)

    def replace(self, **overrides) -> "ExperimentConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return self.from_dict({**self.to_dict(), **overrides})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    # ------------------------------------------------------------ derived
    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _NOT_HASHED}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def training_hash(self) -> str:
        """Hash of everything that determines the trained model (true labels)."""
        keys = ("dataset", "data_path", "target_column", "test_fraction", "subset_train",
                "subset_eval", "linear_n", "linear_weights", "linear_noise", "uq", "p",
                "members", "prior_mu", "prior_sigma", "batch_size", "optimizer", "momentum",
                "seed")
        d = {k: getattr(self, k) for k in keys}
        d.update(arch=self.resolved_arch, epochs=self.resolved_epochs,
                 learning_rate=self.resolved_learning_rate)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @property
    def modality(self) -> str:
        return "image" if self.dataset == "cifar10" else "tabular"

    @property
    def resolved_arch(self) -> str:
        return DEFAULT_ARCH[self.dataset] if self.arch == "auto" else self.arch

    @property
    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return {"cifar10": 15, "housing": 100}.get(self.dataset, 50)

    @property
    def resolved_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        if self.dataset == "housing":
            return HOUSING_LR.get(self.uq, 0.01)
        return 0.01

    @property
    def strategy(self) -> UQStrategy:
        return UQStrategy(self.uq, self.p, self.members, self.prior_mu, self.prior_sigma)

    @property
    def rules(self) -> VerdictRules:
        return VerdictRules(self.rho_threshold, self.sigma_margin, self.ssim_final_max,
                            self.ssim_data_max)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.resolved_epochs, self.batch_size, self.resolved_learning_rate,
                           self.optimizer, self.momentum, self.seed)

    def explainer_kwargs(self) -> dict:
        if self.explainer == "ig":
            return {"steps": self.ig_steps}
        if self.explainer == "lime":
            return {"n_perturbations": self.lime_samples, "kernel_width": self.lime_kernel_width,
                    "perturb_sigma": self.lime_sigma}
        return {}

    @property
    def tag(self) -> str:
        return f"{self.dataset}_{self.uq}_{self.explainer}_{self.test}_s{self.seed}_{self.config_hash()[:12]}"

    # --------------------------------------------------------- validation
    def validate(self) -> "ExperimentConfig":
        def bad(msg):
            raise ConfigError(msg)

        if self.dataset not in DATASETS:
            bad(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset != "synthetic-linear" and not self.data_path:
            bad(f"dataset {self.dataset!r} needs data_path")
        if self.uq not in STRATEGIES:
            bad(f"uq must be one of {STRATEGIES}, got {self.uq!r}")
        if self.explainer not in EXPLAINERS:
            bad(f"explainer must be one of {sorted(EXPLAINERS)}, got {self.explainer!r}")
        if self.explainer == "lime" and self.modality == "image":
            bad("LIME is defined for tabular inputs only; use gbp/ig/gradient with cifar10")
        if self.test not in ("weight", "data"):
            bad(f"test must be 'weight' or 'data', got {self.test!r}")
        if self.arch not in ("auto", "mlp", "cnn", "linear"):
            bad(f"unknown arch {self.arch!r}")
        if self.modality == "image" and self.resolved_arch != "cnn":
            bad("cifar10 requires the cnn architecture")
        if self.modality == "tabular" and self.resolved_arch == "cnn":
            bad("the cnn architecture needs image data")
        if self.target not in ("label", "predicted") and not self.target.isdigit():
            bad("target must be 'label', 'predicted' or a class index")
        if not 0.0 <= self.p < 1.0:
            bad("p must lie in [0, 1)")
        if self.members < 1:
            bad("members must be at least 1")
        if self.prior_sigma <= 0:
            bad("prior_sigma must be positive")
        if self.T is not None and self.T < 1:
            bad("T must be at least 1")
        if self.T is not None and self.uq == "ensemble" and self.T != self.members:
            bad("for ensembles T equals the member count")
        if self.ig_steps < 1 or self.lime_samples < 3:
            bad("ig_steps must be >= 1 and lime_samples >= 3")
        if self.eval_size is not None and self.eval_size < 1:
            bad("eval_size must be positive")
        if self.workers < 1:
            bad("workers must be at least 1")
        try:
            self.train_config().validate()
            UQStrategy(self.uq, self.p, self.members, self.prior_mu, self.prior_sigma)
        except ValueError as e:
            bad(str(e))
        return self
