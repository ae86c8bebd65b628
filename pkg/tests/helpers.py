"""Shared oracles for the test-suite. Kept independent of the code under test."""

import numpy as np

from uqsanity.nn import (Conv2D, Dense, DropConnectDense, Dropout, Flatten, FlipoutDense,
                         Network, ReLU)


def central_difference(f, x, h=1e-3):
    """Central finite differences of scalar-per-row ``f`` at every input component (float64)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(len(x), -1)
    gflat = grad.reshape(len(x), -1)
    for j in range(flat.shape[1]):
        xp = flat.copy()
        xm = flat.copy()
        xp[:, j] += h
        xm[:, j] -= h
        gflat[:, j] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return grad


def naive_conv2d(x, w, b, stride=1):
    """Quadruple loop reference convolution (valid, NCHW)."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = (h - k) // stride + 1, (wd - k) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = x[ni, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[ni, oi, i, j] = np.sum(patch.astype(np.float64) * w[oi]) + b[oi]
    return out


def naive_ssim(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03, L=1.0):
    """Per-pixel double loop SSIM with a Gaussian window over valid positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    a, b = (a - lo) / (hi - lo), (b - lo) / (hi - lo)
    g = np.array([np.exp(-((i - (size - 1) / 2) ** 2) / (2 * sigma ** 2)) for i in range(size)])
    win = np.outer(g, g)
    win /= win.sum()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa = a[i:i + size, j:j + size]
            pb = b[i:i + size, j:j + size]
            ma, mb = (win * pa).sum(), (win * pb).sum()
            va = (win * (pa - ma) ** 2).sum()
            vb = (win * (pb - mb) ** 2).sum()
            cov = (win * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) /
                        ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def random_net(rng, kind: str, seed: int):
    """Small random architectures used by the gradient oracle suite."""
    if kind == "dense":
        d = int(rng.integers(2, 6))
        h = int(rng.integers(3, 9))
        return Network([Dense(d, h), ReLU(), Dense(h, h), ReLU(), Dense(h, 3)], seed=seed), (d,)
    if kind == "conv":
        c = int(rng.integers(1, 3))
        s = int(rng.integers(1, 3))
        net = Network([Conv2D(c, 3, 3, stride=s), ReLU(), Conv2D(3, 2, 2), ReLU(), Flatten(),
                       Dense(2 * ((7 - 3) // s + 1 - 1) ** 2, 2)], seed=seed)
        return net, (c, 7, 7)
    if kind == "dropout":
        d = int(rng.integers(2, 6))
        return Network([Dense(d, 6), ReLU(), Dropout(0.5), Dense(6, 4), ReLU(), Dense(4, 2)],
                       seed=seed), (d,)
    if kind == "dropconnect":
        d = int(rng.integers(2, 6))
        return Network([Dense(d, 6), ReLU(), DropConnectDense(6, 2, 0.3)], seed=seed), (d,)
    if kind == "flipout":
        d = int(rng.integers(2, 6))
        return Network([Dense(d, 6), ReLU(), FlipoutDense(6, 2)], seed=seed), (d,)
    raise ValueError(kind)


def relu_margin(net, x, noise):
    """Smallest |pre-activation| feeding any ReLU (distance to a kink)."""
    h = np.asarray(x, dtype=net.dtype)
    margin = np.inf
    for layer, nz in zip(net.layers, noise if noise is not None else [None] * len(net.layers)):
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.abs(h).min()))
        h, _ = layer.forward(h, "stochastic" if nz is not None else "eval", None, nz)
    return margin


def gradient_case(seed: int, kind: str):
    """Return (float64 net, x, noise, analytic grad, numeric grad) for one oracle case."""
    from uqsanity.nn import backward_to_input
    rng = np.random.default_rng(seed)
    net, shape = random_net(rng, kind, seed)
    net = net.astype(np.float64)
    noise = net.sample_noise(rng, (1,) + shape) if net.is_stochastic else None
    mode = "stochastic" if noise is not None else "eval"
    target = int(rng.integers(0, net.predict(np.zeros((1,) + shape), mode, noise=noise).shape[1]))
    for _ in range(100):
        x = rng.standard_normal((1,) + shape)
        if relu_margin(net, x, noise) > 2e-2:
            break
    _, tape = net.forward(x, mode, noise=noise)
    analytic = backward_to_input(net, tape, target)
    numeric = central_difference(
        lambda z: net.predict(z, mode, noise=noise)[:, target], x, h=1e-3)
    return analytic, numeric


def relative_error(a, n):
    a, n = np.ravel(a), np.ravel(n)
    scale = max(np.abs(n).max(), np.abs(a).max(), 1e-6)
    return float(np.abs(a - n).max() / scale)
