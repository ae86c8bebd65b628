"""Minimal numpy neural-network substrate.

Layers keep their parameters in plain float arrays and implement an explicit
forward/backward pair. Backpropagation runs both to parameters (training) and
to the input (saliency), and every stochastic layer can either sample fresh
noise or replay a frozen realization so that one posterior sample can be
queried at many inputs.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MODES = ("train", "eval", "stochastic")
HEADS = ("regression", "classification")


class NonFiniteError(FloatingPointError):
    """Raised when an activation, gradient or loss stops being finite."""


class StaleTapeError(RuntimeError):
    """Raised when a tape is replayed against a network it was not recorded on."""


class TrainingDivergedError(RuntimeError):
    pass


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {what}")


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    """Base class. Parameter-free layers only override forward/backward."""

    kind = "layer"
    tag = 0
    param_names: tuple[str, ...] = ()
    stochastic = False

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}

    @property
    def has_params(self) -> bool:
        return bool(self.param_names)

    def reset_parameters(self, rng: np.random.Generator, dtype=np.float32) -> None:
        pass

    def weight_shape(self) -> tuple[int, ...]:
        return ()

    def hyper(self) -> tuple[float, ...]:
        """Hyper-parameters persisted after the parameter block."""
        return ()

    def describe(self) -> str:
        return self.kind

    def sample_noise(self, rng, input_shape, per_example: bool):
        return None

    def forward(self, x, mode, rng, noise):
        raise NotImplementedError

    def backward(self, grad, cache, rule, need_param_grads):
        raise NotImplementedError

    def kl(self):
        return 0.0, {}


class Dense(Layer):
    kind = "Dense"
    tag = 1
    param_names = ("weight", "bias")

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        if n_in <= 0 or n_out <= 0:
            raise ValueError("Dense dimensions must be positive")
        self.n_in, self.n_out = n_in, n_out

    def reset_parameters(self, rng, dtype=np.float32):
        self.params = {
            "weight": kaiming_uniform(rng, (self.n_in, self.n_out), self.n_in, dtype),
            "bias": np.zeros(self.n_out, dtype=dtype),
        }

    def weight_shape(self):
        return (self.n_in, self.n_out)

    def describe(self):
        return f"{self.kind}({self.n_in}->{self.n_out})"

    def _weight(self, mode, noise):
        return self.params["weight"]

    def forward(self, x, mode, rng, noise):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"{self.describe()} expects (N, {self.n_in}), got {x.shape}")
        w = self._weight(mode, noise)
        return x @ w + self.params["bias"], (x, w)

    def backward(self, grad, cache, rule, need_param_grads):
        x, w = cache
        grads = {}
        if need_param_grads:
            grads["weight"] = x.T @ grad
            grads["bias"] = grad.sum(axis=0)
        return grad @ w.T, grads


class DropConnectDense(Dense):
    """Dense layer whose weight matrix is masked once per forward pass.

    Inverted scaling: kept weights are divided by the keep probability, so
    eval mode uses the stored weights unchanged.
    """

    kind = "DropConnectDense"
    tag = 6
    stochastic = True

    def __init__(self, n_in: int, n_out: int, p: float = 0.5):
        super().__init__(n_in, n_out)
        if not 0.0 <= p < 1.0:
            raise ValueError("DropConnect probability must lie in [0, 1)")
        self.p = float(p)

    def hyper(self):
        return (self.p,)

    def describe(self):
        return f"{self.kind}({self.n_in}->{self.n_out},p={self.p})"

    def sample_noise(self, rng, input_shape, per_example):
        keep = 1.0 - self.p
        mask = rng.random((self.n_in, self.n_out)) < keep
        return (mask / keep).astype(self.params["weight"].dtype)

    def _weight(self, mode, noise):
        if mode == "eval":
            return self.params["weight"]
        return self.params["weight"] * noise

    def forward(self, x, mode, rng, noise):
        if mode != "eval" and noise is None:
            noise = self.sample_noise(rng, x.shape, True)
        y, (x, w) = super().forward(x, mode, rng, noise)
        return y, (x, w, noise if mode != "eval" else None)

    def backward(self, grad, cache, rule, need_param_grads):
        x, w, mask = cache
        grads = {}
        if need_param_grads:
            gw = x.T @ grad
            grads["weight"] = gw if mask is None else gw * mask
            grads["bias"] = grad.sum(axis=0)
        return grad @ w.T, grads


@dataclass
class FlipoutNoise:
    eps: np.ndarray  # (in, out), shared by every example
    sign_in: np.ndarray  # (N, in) or (in,)
    sign_out: np.ndarray  # (N, out) or (out,)


class FlipoutDense(Layer):
    """Gaussian mean-field dense layer with Flipout sign-flip perturbations.

    Posterior sigma is ``exp(log_sigma)``; the prior is an isotropic Gaussian.
    Each example in a batch sees the weight ``mean + (sigma * eps) * s r^T``
    with its own random sign vectors ``s`` and ``r``.
    """

    kind = "FlipoutDense"
    tag = 7
    param_names = ("mean", "log_sigma", "bias")
    stochastic = True

    def __init__(self, n_in: int, n_out: int, prior_mu: float = 0.0,
                 prior_sigma: float = 1.0, init_log_sigma: float = -3.0):
        super().__init__()
        if prior_sigma <= 0:
            raise ValueError("prior sigma must be positive")
        self.n_in, self.n_out = n_in, n_out
        self.prior_mu = float(prior_mu)
        self.prior_sigma = float(prior_sigma)
        self.init_log_sigma = float(init_log_sigma)

    def reset_parameters(self, rng, dtype=np.float32):
        self.params = {
            "mean": kaiming_uniform(rng, (self.n_in, self.n_out), self.n_in, dtype),
            "log_sigma": np.full((self.n_in, self.n_out), self.init_log_sigma, dtype=dtype),
            "bias": np.zeros(self.n_out, dtype=dtype),
        }

    def weight_shape(self):
        return (self.n_in, self.n_out)

    def hyper(self):
        return (self.prior_mu, self.prior_sigma, self.init_log_sigma)

    def describe(self):
        return f"{self.kind}({self.n_in}->{self.n_out},prior=N({self.prior_mu},{self.prior_sigma}^2))"

    def sample_noise(self, rng, input_shape, per_example):
        dtype = self.params["mean"].dtype
        eps = rng.standard_normal((self.n_in, self.n_out)).astype(dtype)
        lead = (input_shape[0],) if per_example else ()
        s = rng.choice(np.array([-1.0, 1.0], dtype=dtype), size=lead + (self.n_in,))
        r = rng.choice(np.array([-1.0, 1.0], dtype=dtype), size=lead + (self.n_out,))
        return FlipoutNoise(eps, s, r)

    def forward(self, x, mode, rng, noise):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"{self.describe()} expects (N, {self.n_in}), got {x.shape}")
        mean, bias = self.params["mean"], self.params["bias"]
        y = x @ mean + bias
        if mode == "eval":
            return y, (x, None, None)
        if noise is None:
            noise = self.sample_noise(rng, x.shape, True)
        delta = np.exp(self.params["log_sigma"]) * noise.eps
        xs = x * noise.sign_in
        y = y + (xs @ delta) * noise.sign_out
        return y, (x, noise, delta)

    def backward(self, grad, cache, rule, need_param_grads):
        x, noise, delta = cache
        mean = self.params["mean"]
        gx = grad @ mean.T
        grads = {}
        if need_param_grads:
            grads["mean"] = x.T @ grad
            grads["bias"] = grad.sum(axis=0)
            grads["log_sigma"] = np.zeros_like(self.params["log_sigma"])
        if noise is None:
            return gx, grads
        gr = grad * noise.sign_out
        gx = gx + (gr @ delta.T) * noise.sign_in
        if need_param_grads:
            g_delta = (x * noise.sign_in).T @ gr
            grads["log_sigma"] = g_delta * delta
        return gx, grads

    def kl(self):
        """Closed-form KL(q || prior) summed over weights, with its gradients."""
        mu = self.params["mean"].astype(np.float64)
        log_sigma = self.params["log_sigma"].astype(np.float64)
        var = np.exp(2.0 * log_sigma)
        p_var = self.prior_sigma ** 2
        diff = mu - self.prior_mu
        kl = (math.log(self.prior_sigma) - log_sigma + (var + diff ** 2) / (2.0 * p_var) - 0.5).sum()
        dtype = self.params["mean"].dtype
        grads = {
            "mean": (diff / p_var).astype(dtype),
            "log_sigma": (var / p_var - 1.0).astype(dtype),
        }
        return float(kl), grads


class Conv2D(Layer):
    """Valid (unpadded) 2-D convolution on NCHW tensors."""

    kind = "Conv2D"
    tag = 2
    param_names = ("weight", "bias")

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1):
        super().__init__()
        if min(in_channels, out_channels, kernel_size, stride) <= 0:
            raise ValueError("Conv2D dimensions must be positive")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride = kernel_size, stride

    def reset_parameters(self, rng, dtype=np.float32):
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        self.params = {
            "weight": kaiming_uniform(rng, self.weight_shape(), fan_in, dtype),
            "bias": np.zeros(self.out_channels, dtype=dtype),
        }

    def weight_shape(self):
        k = self.kernel_size
        return (self.out_channels, self.in_channels, k, k)

    def hyper(self):
        return (float(self.stride),)

    def describe(self):
        k = self.kernel_size
        return f"{self.kind}({self.in_channels}->{self.out_channels},{k}x{k},s={self.stride})"

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s = self.kernel_size, self.stride
        return (h - k) // s + 1, (w - k) // s + 1

    def forward(self, x, mode, rng, noise):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"{self.describe()} expects (N, {self.in_channels}, H, W), got {x.shape}")
        n, c, h, w = x.shape
        k, s = self.kernel_size, self.stride
        if h < k or w < k:
            raise ValueError(f"{self.describe()} input {h}x{w} smaller than kernel")
        ho, wo = self.output_hw(h, w)
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        out = cols @ wmat.T + self.params["bias"]
        out = out.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (cols, x.shape)

    def backward(self, grad, cache, rule, need_param_grads):
        cols, in_shape = cache
        n, c, h, w = in_shape
        k, s = self.kernel_size, self.stride
        _, o, ho, wo = grad.shape
        g = grad.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        wmat = self.params["weight"].reshape(o, -1)
        grads = {}
        if need_param_grads:
            grads["weight"] = (g.T @ cols).reshape(self.weight_shape())
            grads["bias"] = g.sum(axis=0)
        dcols = (g @ wmat).reshape(n, ho, wo, c, k, k)
        gx = np.zeros(in_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        return gx, grads


class ReLU(Layer):
    kind = "ReLU"
    tag = 3

    def forward(self, x, mode, rng, noise):
        return np.maximum(x, 0), x

    def backward(self, grad, cache, rule, need_param_grads):
        if rule == "guided":
            # positive forward activation AND positive upstream signal
            return grad * ((cache > 0) & (grad > 0)), {}
        return grad * (cache > 0), {}


class Flatten(Layer):
    kind = "Flatten"
    tag = 4

    def forward(self, x, mode, rng, noise):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache, rule, need_param_grads):
        return grad.reshape(cache), {}


class Dropout(Layer):
    """Inverted dropout on activations."""

    kind = "Dropout"
    tag = 5
    stochastic = True

    def __init__(self, p: float = 0.5):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("Dropout probability must lie in [0, 1)")
        self.p = float(p)

    def hyper(self):
        return (self.p,)

    def describe(self):
        return f"{self.kind}(p={self.p})"

    def sample_noise(self, rng, input_shape, per_example):
        shape = tuple(input_shape) if per_example else tuple(input_shape[1:])
        keep = 1.0 - self.p
        return ((rng.random(shape) < keep) / keep).astype(np.float32)

    def forward(self, x, mode, rng, noise):
        if mode == "eval":
            return x, None
        if noise is None:
            noise = self.sample_noise(rng, x.shape, True)
        mask = noise.astype(x.dtype, copy=False)
        return x * mask, mask

    def backward(self, grad, cache, rule, need_param_grads):
        return (grad if cache is None else grad * cache), {}


LAYER_TYPES = {cls.tag: cls for cls in (Dense, Conv2D, ReLU, Flatten, Dropout,
                                        DropConnectDense, FlipoutDense)}


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Activation record of one forward call."""

    owner_id: int
    version: int
    mode: str
    caches: list
    noise: list
    output: np.ndarray
    input_shape: tuple


class Network:
    """Ordered layer stack with a task head.

    Two networks built from the same layer list and seed are bit-identical.
    """

    def __init__(self, layers: Sequence[Layer], head: str = "regression",
                 seed: int = 0, dtype=np.float32):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.layers = list(layers)
        self.head = head
        self.seed = int(seed)
        self.version = 0
        rng = np.random.default_rng(self.seed)
        for layer in self.layers:
            layer.reset_parameters(rng, dtype)

    # -- structure ----------------------------------------------------------
    @property
    def dtype(self):
        for layer in self.layers:
            for arr in layer.params.values():
                return arr.dtype
        return np.dtype(np.float32)

    @property
    def parameterized_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.has_params]

    @property
    def is_stochastic(self) -> bool:
        return any(layer.stochastic for layer in self.layers)

    def architecture(self) -> str:
        return self.head + ":" + "|".join(layer.describe() for layer in self.layers)

    def architecture_hash(self) -> str:
        return hashlib.sha256(self.architecture().encode()).hexdigest()

    def params_hash(self) -> str:
        h = hashlib.sha256(self.architecture().encode())
        for layer in self.layers:
            for name in layer.param_names:
                h.update(np.ascontiguousarray(layer.params[name]).tobytes())
        return h.hexdigest()

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Network":
        net = self.copy()
        for layer in net.layers:
            layer.params = {k: v.astype(dtype) for k, v in layer.params.items()}
        net.version += 1
        return net

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name in layer.param_names:
                yield i, name, layer.params[name]

    def touch(self) -> None:
        self.version += 1

    # -- computation --------------------------------------------------------
    def sample_noise(self, rng: np.random.Generator, input_shape) -> list:
        """Draw one frozen noise realization for a single example.

        The realization broadcasts over any batch, so the same posterior
        sample can be evaluated at many inputs.
        """
        noise = []
        shape = (1,) + tuple(input_shape[1:] if len(input_shape) > 1 else input_shape)
        probe = np.zeros(shape, dtype=self.dtype)
        for layer in self.layers:
            noise.append(layer.sample_noise(rng, probe.shape, False) if layer.stochastic else None)
            probe, _ = layer.forward(probe, "eval", None, None)
        return noise

    def forward(self, x: np.ndarray, mode: str = "eval", rng: np.random.Generator | None = None,
                noise: list | None = None) -> tuple[np.ndarray, Tape]:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        x = np.asarray(x, dtype=self.dtype)
        if mode != "eval" and noise is None and self.is_stochastic and rng is None:
            raise ValueError("stochastic forward needs an rng or a frozen noise realization")
        if noise is not None and len(noise) != len(self.layers):
            raise ValueError("noise realization does not match network depth")
        caches, used = [], []
        h = x
        for i, layer in enumerate(self.layers):
            layer_noise = None if noise is None else noise[i]
            if layer.stochastic and mode != "eval" and layer_noise is None:
                layer_noise = layer.sample_noise(rng, h.shape, True)
            h, cache = layer.forward(h, mode, rng, layer_noise)
            _check_finite(h, f"layer {i} ({layer.describe()}) output")
            caches.append(cache)
            used.append(layer_noise)
        tape = Tape(id(self), self.version, mode, caches, used, h, x.shape)
        return h, tape

    def predict(self, x, mode="eval", rng=None, noise=None) -> np.ndarray:
        return self.forward(x, mode, rng, noise)[0]

    def backward(self, tape: Tape, grad_out: np.ndarray, rule: str = "vanilla",
                 need_param_grads: bool = False):
        if tape.owner_id != id(self) or tape.version != self.version:
            raise StaleTapeError("tape was recorded on a different network state")
        if rule not in ("vanilla", "guided"):
            raise ValueError(f"unknown backward rule {rule!r}")
        g = np.asarray(grad_out, dtype=self.dtype)
        param_grads: list[dict] = [dict() for _ in self.layers]
        for i in range(len(self.layers) - 1, -1, -1):
            g, grads = self.layers[i].backward(g, tape.caches[i], rule, need_param_grads)
            param_grads[i] = grads
        _check_finite(g, "input gradient")
        return g, param_grads


def forward(net: Network, x, mode: str = "eval", rng=None, noise=None):
    return net.forward(x, mode, rng, noise)


def output_seed(net: Network, tape: Tape, target) -> np.ndarray:
    """One-hot upstream gradient selecting output neuron(s) ``target``."""
    out = tape.output
    n, k = out.shape
    idx = np.broadcast_to(np.asarray(target, dtype=np.int64), (n,))
    if (idx < 0).any() or (idx >= k).any():
        raise IndexError(f"target index out of range for {k} outputs")
    g = np.zeros_like(out)
    g[np.arange(n), idx] = 1
    return g


def backward_to_input(net: Network, tape: Tape, target=0, rule: str = "vanilla") -> np.ndarray:
    """Gradient of the selected output (logit or regression value) w.r.t. the input.

    Uses exactly the noise realization recorded on ``tape``.
    """
    if tape.owner_id != id(net) or tape.version != net.version:
        raise StaleTapeError("tape was recorded on a different network state")
    gx, _ = net.backward(tape, output_seed(net, tape, target), rule=rule)
    return gx


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.01
    optimizer: str = "momentum"  # "sgd" or "momentum"
    momentum: float = 0.9
    seed: int = 0

    def validate(self, n_examples: int | None = None) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("batch_size and learning_rate must be positive")
        if self.optimizer not in ("sgd", "momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if n_examples is not None and self.batch_size > n_examples:
            raise ValueError(f"batch_size {self.batch_size} exceeds dataset size {n_examples}")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    nll: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def task_loss(head: str, out: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean task loss and its gradient w.r.t. the network output."""
    n = out.shape[0]
    if head == "regression":
        diff = out - y.reshape(out.shape).astype(out.dtype)
        return float(np.mean(diff.astype(np.float64) ** 2)), (2.0 / diff.size) * diff
    probs = softmax(out.astype(np.float64))
    labels = y.astype(np.int64)
    nll = -np.log(np.maximum(probs[np.arange(n), labels], 1e-300)).mean()
    g = probs
    g[np.arange(n), labels] -= 1.0
    return float(nll), (g / n).astype(out.dtype)


def kl_total(net: Network) -> float:
    return sum(layer.kl()[0] for layer in net.layers if isinstance(layer, FlipoutDense))


def train(net: Network, X: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          elbo: bool | None = None) -> tuple[Network, TrainHistory]:
    """Mini-batch SGD(+momentum). Returns a trained copy; ``net`` is untouched.

    With Flipout layers the objective is ``nll + KL / num_batches``.
    """
    n = len(X)
    if n == 0:
        raise ValueError("empty training set")
    if len(y) != n:
        raise ValueError("X and y lengths differ")
    cfg.validate(n)
    has_flipout = any(isinstance(l, FlipoutDense) for l in net.layers)
    use_kl = has_flipout if elbo is None else (elbo and has_flipout)

    net = net.copy()
    X = np.asarray(X, dtype=net.dtype)
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    noise_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    n_batches = math.ceil(n / cfg.batch_size)
    velocity = {(i, name): np.zeros_like(p) for i, name, p in net.parameters()}
    history = TrainHistory()

    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        tot = tot_nll = tot_kl = 0.0
        for b in range(n_batches):
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            out, tape = net.forward(X[idx], "train", noise_rng)
            nll, g = task_loss(net.head, out, y[idx])
            _, grads = net.backward(tape, g, need_param_grads=True)
            kl = 0.0
            if use_kl:
                for i, layer in enumerate(net.layers):
                    if isinstance(layer, FlipoutDense):
                        k, kg = layer.kl()
                        kl += k
                        for name, gk in kg.items():
                            grads[i][name] = grads[i][name] + gk / n_batches
                kl /= n_batches
            loss = nll + kl
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b} (lr={cfg.learning_rate})")
            for i, name, p in net.parameters():
                gp = grads[i][name]
                if cfg.optimizer == "momentum":
                    v = velocity[(i, name)]
                    v *= cfg.momentum
                    v += gp
                    p -= cfg.learning_rate * v
                else:
                    p -= cfg.learning_rate * gp
            tot += loss * len(idx)
            tot_nll += nll * len(idx)
            tot_kl += kl * len(idx)
        net.touch()
        history.loss.append(tot / n)
        history.nll.append(tot_nll / n)
        history.kl.append(tot_kl / n)
    return net, history


def reinitialize_layer(net: Network, layer_index: int, rng: np.random.Generator) -> Network:
    """Return a copy of ``net`` with one layer redrawn from its initializer."""
    if not 0 <= layer_index < len(net.layers):
        raise IndexError(f"layer index {layer_index} out of range")
    if not net.layers[layer_index].has_params:
        raise ValueError(f"layer {layer_index} ({net.layers[layer_index].kind}) has no parameters")
    new = net.copy()
    new.layers[layer_index].reset_parameters(rng, net.dtype)
    new.touch()
    return new


def evaluate_loss(net: Network, X, y, batch_size: int = 1024) -> float:
    tot = 0.0
    for s in range(0, len(X), batch_size):
        out = net.predict(X[s:s + batch_size])
        tot += task_loss(net.head, out, y[s:s + batch_size])[0] * len(out)
    return tot / len(X)
