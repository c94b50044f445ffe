"""Rigid primitive objects with analytic signed distances.

Dimensions, in metres: sphere ``(radius,)``; box ``(width_x, height_y,
depth_z)``; cylinder ``(radius, height)`` with its axis along +Y. Every
primitive is centred on its local origin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("sphere", "box", "cylinder")


@dataclass(frozen=True)
class PrimitiveObject:
    kind: str
    dims: tuple[float, ...]

    def __post_init__(self):
        expected = {"sphere": 1, "box": 3, "cylinder": 2}
        if self.kind not in expected:
            raise ValueError(f"unknown primitive {self.kind!r}; expected one of {KINDS}")
        if len(self.dims) != expected[self.kind] or min(self.dims) <= 0:
            raise ValueError(f"{self.kind} needs {expected[self.kind]} positive dims, got {self.dims}")

    def sdf(self, p: np.ndarray) -> np.ndarray:
        """Signed distance of local-frame points (..., 3): negative inside."""
        p = np.asarray(p, dtype=float)
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=-1) - self.dims[0]
        if self.kind == "box":
            q = np.abs(p) - 0.5 * np.asarray(self.dims)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(axis=-1), 0.0)
        r, h = self.dims
        q = np.stack([np.hypot(p[..., 0], p[..., 2]) - r, np.abs(p[..., 1]) - 0.5 * h], axis=-1)
        return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)

    def contains(self, p: np.ndarray) -> np.ndarray:
        """Inside test written directly from the shape definition."""
        p = np.asarray(p, dtype=float)
        if self.kind == "sphere":
            return (p ** 2).sum(-1) < self.dims[0] ** 2
        if self.kind == "box":
            return np.all(np.abs(p) < 0.5 * np.asarray(self.dims), axis=-1)
        r, h = self.dims
        return (p[..., 0] ** 2 + p[..., 2] ** 2 < r * r) & (np.abs(p[..., 1]) < 0.5 * h)

    def bounding_half_extent(self) -> np.ndarray:
        if self.kind == "sphere":
            return np.full(3, self.dims[0])
        if self.kind == "box":
            return 0.5 * np.asarray(self.dims)
        r, h = self.dims
        return np.array([r, 0.5 * h, r])

    def surface_points(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` points sampled uniformly by area on the surface."""
        if self.kind == "sphere":
            v = rng.standard_normal((n, 3))
            return self.dims[0] * v / np.linalg.norm(v, axis=1, keepdims=True)
        if self.kind == "box":
            half = 0.5 * np.asarray(self.dims)
            areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]]).repeat(2)
            face = rng.choice(6, size=n, p=areas / areas.sum())
            pts = rng.uniform(-1, 1, size=(n, 3)) * half
            axis = face // 2
            sign = np.where(face % 2 == 0, 1.0, -1.0)
            pts[np.arange(n), axis] = sign * half[axis]
            return pts
        r, h = self.dims
        areas = np.array([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
        part = rng.choice(3, size=n, p=areas / areas.sum())
        theta = rng.uniform(0, 2 * np.pi, n)
        rad = np.where(part == 0, r, r * np.sqrt(rng.uniform(0, 1, n)))
        y = np.where(part == 0, rng.uniform(-0.5 * h, 0.5 * h, n),
                     np.where(part == 1, 0.5 * h, -0.5 * h))
        return np.stack([rad * np.cos(theta), y, rad * np.sin(theta)], axis=1)


def object_from_clip(clip) -> PrimitiveObject:
    """The analytic primitive recorded in a clip's annotations."""
    return PrimitiveObject(clip.object_kind, tuple(clip.object_dims))
