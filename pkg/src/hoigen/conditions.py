"""Condition tokens: diffusion timestep, text label and object geometry.

Text features come from an :class:`EmbeddingProvider`, either a table file
holding precomputed 512-d vectors (e.g. exported from a frozen text encoder)
or a seeded stub that maps each label id to a fixed random direction.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import Linear, Module, Parameter
from .autodiff.tensor import Tensor

TEXT_DIM = 512
TABLE_MAGIC = "HOIEMB"


class UnknownLabelError(KeyError):
    pass


class EmbeddingProvider:
    dim = TEXT_DIM

    def embed(self, label: int) -> np.ndarray:
        raise NotImplementedError

    def embed_batch(self, labels: Sequence[int]) -> np.ndarray:
        return np.stack([self.embed(int(l)) for l in labels])


class StubEmbedding(EmbeddingProvider):
    """Deterministic unit-scale Gaussian vector per (seed, label)."""

    def __init__(self, seed: int = 0, dim: int = TEXT_DIM):
        self.seed = int(seed)
        self.dim = dim

    def embed(self, label: int) -> np.ndarray:
        if label < 0:
            raise UnknownLabelError(f"label id must be non-negative, got {label}")
        rng = np.random.default_rng([self.seed, int(label)])
        return rng.standard_normal(self.dim) / math.sqrt(self.dim)


class TableEmbedding(EmbeddingProvider):
    def __init__(self, labels: Sequence[int], names: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(labels):
            raise ValueError(f"table has {len(labels)} labels but vectors of shape {vectors.shape}")
        self.dim = vectors.shape[1]
        self.names = {int(l): n for l, n in zip(labels, names)}
        self.rows = {int(l): i for i, l in enumerate(labels)}
        self.vectors = vectors

    def embed(self, label: int) -> np.ndarray:
        row = self.rows.get(int(label))
        if row is None:
            known = ", ".join(f"{l}:{self.names[l]}" for l in sorted(self.rows))
            raise UnknownLabelError(f"unknown label {label}; known labels: {known}")
        return self.vectors[row].copy()

    def label_for(self, name: str) -> int:
        for label, n in self.names.items():
            if n == name:
                return label
        raise UnknownLabelError(f"unknown label name {name!r}")


def write_embedding_table(path: str | Path, labels: Sequence[int], names: Sequence[str],
                          vectors: np.ndarray) -> None:
    """Header ``HOIEMB <rows> <cols>``, then ``label_id<TAB>name`` lines, then float32 rows."""
    vectors = np.asarray(vectors, dtype="<f4")
    head = f"{TABLE_MAGIC} {vectors.shape[0]} {vectors.shape[1]}\n"
    head += "".join(f"{int(l)}\t{n}\n" for l, n in zip(labels, names))
    Path(path).write_bytes(head.encode() + np.ascontiguousarray(vectors).tobytes())


def read_embedding_table(path: str | Path) -> TableEmbedding:
    blob = Path(path).read_bytes()
    end = blob.index(b"\n")
    magic, rows, cols = blob[:end].decode().split()
    if magic != TABLE_MAGIC:
        raise ValueError(f"{path}: not an embedding table")
    rows, cols = int(rows), int(cols)
    labels, names, pos = [], [], end + 1
    for _ in range(rows):
        end = blob.index(b"\n", pos)
        label, name = blob[pos:end].decode().split("\t", 1)
        labels.append(int(label))
        names.append(name)
        pos = end + 1
    data = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=pos).reshape(rows, cols)
    return TableEmbedding(labels, names, data.astype(np.float64))


# ------------------------------------------------------------------ encoders
class GeometryEncoder(Module):
    """Shared point MLP 3 -> 64 -> 128, max over points, linear to ``d_model``."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.fc1 = Linear(3, 64, rng)
        self.fc2 = Linear(64, 128, rng)
        self.out = Linear(128, d_model, rng)

    def forward(self, points: Tensor) -> Tensor:
        """``points`` is (B, P, 3) or (P, 3)."""
        if points.shape[-2] == 0:
            raise ValueError("geometry encoder needs at least one point")
        feat = F.relu(self.fc2(F.relu(self.fc1(points))))
        return self.out(F.max(feat, axis=-2))


def sinusoid(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Interleaved ``sin(t w_i), cos(t w_i)`` features; ``t = 0`` gives 0, 1, 0, 1, ..."""
    t = np.asarray(t, dtype=np.float64)
    freqs = np.exp(-math.log(max_period) * np.arange(dim // 2) / max(dim // 2, 1))
    ang = t[..., None] * freqs
    out = np.zeros(t.shape + (dim,))
    out[..., 0:2 * (dim // 2):2] = np.sin(ang)
    out[..., 1:2 * (dim // 2):2] = np.cos(ang)
    return out


class TimestepEmbedding(Module):
    def __init__(self, d_model: int, n_steps: int, rng: np.random.Generator):
        self.n_steps = n_steps
        self.d_model = d_model
        self.fc1 = Linear(d_model, d_model, rng)
        self.fc2 = Linear(d_model, d_model, rng)

    def forward(self, t) -> Tensor:
        """``t`` holds integer steps in ``[0, n_steps)``."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t >= self.n_steps):
            raise ValueError(f"timestep outside [0, {self.n_steps}): {t}")
        feat = Tensor(sinusoid(t, self.d_model), dtype=self.fc1.weight.dtype)
        return self.fc2(F.silu(self.fc1(feat)))


class ConditionEncoder(Module):
    """Builds the ordered token set ``[timestep, text, geometry]`` as (B, 3, D).

    A dropped token is replaced by its learned null token.
    """

    def __init__(self, d_model: int, n_steps: int, rng: np.random.Generator,
                 text_dim: int = TEXT_DIM):
        self.timestep = TimestepEmbedding(d_model, n_steps, rng)
        self.text_proj = Linear(text_dim, d_model, rng)
        self.geometry = GeometryEncoder(d_model, rng)
        self.null_timestep = Parameter(np.zeros(d_model))
        self.null_text = Parameter(np.zeros(d_model))
        self.null_geometry = Parameter(np.zeros(d_model))

    def forward(self, text_features: np.ndarray, points: np.ndarray, t,
                drop_text=False, drop_geometry=False, drop_timestep=False) -> Tensor:
        """``text_features`` (B, 512) from a provider, ``points`` (B, P, 3), ``t`` (B,)."""
        dtype = self.text_proj.weight.dtype
        b = len(text_features)
        tokens = [
            (self.timestep(np.broadcast_to(np.asarray(t), (b,))), self.null_timestep, drop_timestep),
            (self.text_proj(Tensor(text_features, dtype=dtype)), self.null_text, drop_text),
            (self.geometry(Tensor(points, dtype=dtype)), self.null_geometry, drop_geometry),
        ]
        out = []
        for token, null, drop in tokens:
            drop = np.broadcast_to(np.asarray(drop, dtype=bool), (b,))
            if drop.any():
                token = F.where_mask(token, drop[:, None], null)
            out.append(token)
        return F.stack(out, axis=1)
