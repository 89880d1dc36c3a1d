"""MLP encoder f and projector g with hand-written backward passes.

Weights are stored ``(in_dim, out_dim)`` so a layer computes ``x @ W + b``.
Parameters live in an ordered ``name -> array`` dict (``encoder.0.weight``,
``projector.2.bias``, ...) which is also what the optimizer and checkpoint
code consume.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .kernel import matmul

MAGIC = b"SGCL"
FORMAT_VERSION = 1


class ModelStateError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ("relu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Encoder widths are all ReLU; the projector is hidden-hidden-output."""

    input_dim: int
    encoder_widths: Tuple[int, ...] = (512, 256)
    projector_widths: Tuple[int, ...] = (1024, 1024, 128)
    width_factor: float = 1.0

    def _scaled(self, widths):
        return tuple(max(1, int(round(w * self.width_factor))) for w in widths)

    @property
    def embedding_dim(self) -> int:
        return self._scaled(self.projector_widths)[-1]

    def layers(self) -> Dict[str, List[LayerSpec]]:
        enc, proj = [], []
        prev = self.input_dim
        for w in self.encoder_widths:
            enc.append(LayerSpec(prev, w, "relu"))
            prev = w
        widths = self._scaled(self.projector_widths)
        for i, w in enumerate(widths):
            proj.append(LayerSpec(prev, w, "linear" if i == len(widths) - 1 else "relu"))
            prev = w
        return {"encoder": enc, "projector": proj}


def init_params(spec: ModelSpec, seed: int, dtype=np.float32) -> Dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    for part, layers in spec.layers().items():
        for i, layer in enumerate(layers):
            bound = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            w = rng.uniform(-bound, bound, size=(layer.in_dim, layer.out_dim))
            params[f"{part}.{i}.weight"] = w.astype(dtype)
            params[f"{part}.{i}.bias"] = np.zeros(layer.out_dim, dtype=dtype)
    return params


class Model:
    """Holds parameters plus the activation cache of the last forward call."""

    def __init__(self, spec: ModelSpec, params: Dict[str, np.ndarray]):
        self.spec = spec
        self.params = params
        self._layers = spec.layers()
        self._cache: Optional[dict] = None
        for part, layers in self._layers.items():
            for i, layer in enumerate(layers):
                w = params[f"{part}.{i}.weight"]
                if w.shape != (layer.in_dim, layer.out_dim):
                    raise ValueError(f"{part}.{i}.weight has shape {w.shape}, expected "
                                     f"{(layer.in_dim, layer.out_dim)}")

    @classmethod
    def create(cls, spec: ModelSpec, seed: int, dtype=np.float32) -> "Model":
        return cls(spec, init_params(spec, seed, dtype))

    def _run(self, part: str, x: np.ndarray, cache: Optional[list]):
        for i, layer in enumerate(self._layers[part]):
            pre = matmul(x, self.params[f"{part}.{i}.weight"]) + self.params[f"{part}.{i}.bias"]
            out = np.maximum(pre, 0) if layer.activation == "relu" else pre
            if cache is not None:
                cache.append((x, pre))
            x = out
        return x

    def encode(self, images) -> np.ndarray:
        """Encoder embeddings only; leaves the backward cache untouched."""
        return self._run("encoder", self._check_input(images), None)

    def forward(self, images) -> Tuple[np.ndarray, np.ndarray]:
        x = self._check_input(images)
        cache = {"encoder": [], "projector": []}
        h = self._run("encoder", x, cache["encoder"])
        z = self._run("projector", h, cache["projector"])
        self._cache = cache
        return h, z

    def backward(self, grad_z: np.ndarray) -> Dict[str, np.ndarray]:
        """Gradients of every parameter given dLoss/dz from the last forward."""
        if self._cache is None:
            raise ModelStateError("backward called before forward")
        grads: Dict[str, np.ndarray] = {}
        g = np.asarray(grad_z)
        for part in ("projector", "encoder"):
            layers = self._layers[part]
            for i in reversed(range(len(layers))):
                inp, pre = self._cache[part][i]
                if layers[i].activation == "relu":
                    g = np.where(pre > 0, g, 0).astype(pre.dtype)
                w = self.params[f"{part}.{i}.weight"]
                grads[f"{part}.{i}.weight"] = matmul(inp.T, g)
                grads[f"{part}.{i}.bias"] = np.cumsum(g, axis=0)[-1]
                g = matmul(g, w.T)
        self._cache = None
        return {k: grads[k] for k in self.params if k in grads}

    def _check_input(self, images) -> np.ndarray:
        x = np.asarray(images)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ValueError(f"expected (batch, {self.spec.input_dim}) input, got {x.shape}")
        return x


def save_checkpoint(path, tensors: Dict[str, np.ndarray]) -> None:
    """Write ``SGCL`` + version byte + count, then per tensor: u32 name length,
    UTF-8 name, u8 ndim, u32 dims, little-endian float32 data."""
    chunks = [MAGIC, struct.pack("<BI", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr)
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<BI", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 9
    out: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise CheckpointError(f"{path}: tensor {name!r} truncated")
            out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header at byte {pos}") from exc
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return out
