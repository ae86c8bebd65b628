"""Binary checkpoints ("UXN1") and ensemble manifests.

Layout, little-endian::

    b"UXN1"
    u32 layer_count
    per layer: u8 kind_tag, u32 rank, u32 dims[rank],
               f32 parameters in declared order, f32 hyper-parameters
    u8 head_tag (0 regression, 1 classification)

``dims`` is the shape of the layer's primary weight (rank 0 for parameter-free
layers). Dense stores weight (row-major, in x out) then bias; FlipoutDense
stores mean, log-sigma, then bias. Hyper-parameters follow the parameters:
Conv2D stride, Dropout/DropConnect probability, Flipout prior mu, prior sigma
and initial log-sigma.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .nn import (Conv2D, Dense, DropConnectDense, Dropout, Flatten, FlipoutDense,
                 LAYER_TYPES, Network, ReLU)

MAGIC = b"UXN1"
_HEAD_TAGS = {"regression": 0, "classification": 1}


class CheckpointError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def network_to_bytes(net: Network) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        dims = layer.weight_shape()
        buf.write(struct.pack("<BI", layer.tag, len(dims)))
        if dims:
            buf.write(struct.pack(f"<{len(dims)}I", *dims))
        for name in layer.param_names:
            buf.write(np.ascontiguousarray(layer.params[name], dtype="<f4").tobytes())
        hyper = layer.hyper()
        if hyper:
            buf.write(struct.pack(f"<{len(hyper)}f", *hyper))
    buf.write(struct.pack("<B", _HEAD_TAGS[net.head]))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)


def _build_layer(tag: int, dims: tuple, hyper_count: int, r: _Reader):
    cls = LAYER_TYPES.get(tag)
    if cls is None:
        raise CheckpointError(f"unknown layer tag {tag}")
    if cls in (ReLU, Flatten):
        return cls()
    if cls is Dropout:
        (p,) = r.unpack("f")
        return Dropout(p)
    if cls in (Dense, DropConnectDense):
        n_in, n_out = dims
        w = r.floats((n_in, n_out))
        b = r.floats((n_out,))
        layer = Dense(n_in, n_out) if cls is Dense else DropConnectDense(n_in, n_out, r.unpack("f")[0])
        layer.params = {"weight": w, "bias": b}
        return layer
    if cls is Conv2D:
        o, c, k, _ = dims
        w = r.floats(dims)
        b = r.floats((o,))
        (stride,) = r.unpack("f")
        layer = Conv2D(c, o, k, int(stride))
        layer.params = {"weight": w, "bias": b}
        return layer
    n_in, n_out = dims
    mean = r.floats(dims)
    log_sigma = r.floats(dims)
    b = r.floats((n_out,))
    prior_mu, prior_sigma, init_ls = r.unpack("3f")
    layer = FlipoutDense(n_in, n_out, prior_mu, prior_sigma, init_ls)
    layer.params = {"mean": mean, "log_sigma": log_sigma, "bias": b}
    return layer


def network_from_bytes(data: bytes) -> Network:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic, not a UXN1 checkpoint")
    (count,) = r.unpack("I")
    layers = []
    for _ in range(count):
        tag, rank = r.unpack("BI")
        dims = r.unpack(f"{rank}I") if rank else ()
        layers.append(_build_layer(tag, tuple(dims), 0, r))
    (head_tag,) = r.unpack("B")
    heads = {v: k for k, v in _HEAD_TAGS.items()}
    if head_tag not in heads:
        raise CheckpointError(f"unknown head tag {head_tag}")
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint")
    net = Network.__new__(Network)
    net.layers, net.head, net.seed, net.version = layers, heads[head_tag], 0, 0
    return net


def save_network(net: Network, path) -> None:
    atomic_write_bytes(path, network_to_bytes(net))


def load_network(path) -> Network:
    return network_from_bytes(Path(path).read_bytes())


def save_ensemble(members, directory, stem: str = "member") -> Path:
    """Write one checkpoint per member plus a plain-text manifest.

    The manifest's first line is ``arch <sha256>``; each following line is a
    member checkpoint path relative to the manifest.
    """
    directory = Path(directory)
    arch = {m.architecture_hash() for m in members}
    if len(arch) != 1:
        raise CheckpointError("ensemble members do not share an architecture")
    lines = [f"arch {arch.pop()}"]
    for i, member in enumerate(members):
        name = f"{stem}_{i:03d}.uxn"
        save_network(member, directory / name)
        lines.append(name)
    manifest = directory / f"{stem}.manifest"
    atomic_write_text(manifest, "\n".join(lines) + "\n")
    return manifest


def load_ensemble(manifest) -> list[Network]:
    manifest = Path(manifest)
    lines = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("arch "):
        raise CheckpointError("manifest missing architecture hash line")
    expected = lines[0].split(None, 1)[1]
    members = [load_network(manifest.parent / ln) for ln in lines[1:]]
    for m in members:
        if m.architecture_hash() != expected:
            raise CheckpointError("member architecture does not match manifest hash")
    return members
