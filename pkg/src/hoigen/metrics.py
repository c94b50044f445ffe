"""Geometric interaction metrics: contact distance, penetration, foot skating.

All three work on :class:`RawHOIClip` pairs or single clips whose object is an
analytic primitive, so signed distances are exact.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .primitives import PrimitiveObject, object_from_clip
from .representation import DEFAULT_SKELETON, RawHOIClip, SkeletonSpec

CAPSULE_RADIUS = 0.04
SAMPLES_PER_BONE = 8
FOOT_LOW = 0.05
FOOT_SLIDE = 0.025


class NoContactWarning(UserWarning):
    pass


def _primitive(clip: RawHOIClip) -> PrimitiveObject:
    if clip.object_kind == "points":
        raise ValueError("metrics need an analytic object primitive; clip only carries points")
    return object_from_clip(clip)


def to_object_frame(clip: RawHOIClip, points: np.ndarray) -> np.ndarray:
    """World points (L, ..., 3) expressed in each frame's object frame."""
    rot = clip.object_matrices()
    rel = points - clip.object_trans.reshape((-1,) + (1,) * (points.ndim - 2) + (3,))
    flat = rel.reshape(len(rel), -1, 3)
    return np.einsum("lba,lnb->lna", rot, flat).reshape(points.shape)


def contact_distance(gt: RawHOIClip, generated: RawHOIClip) -> float:
    """Mean |SDF| of the annotated contact joint over annotated contact frames.

    Contact frames and joint come from ``gt``; the joint position and object
    pose come from ``generated``. No flagged frames gives 0 and a
    :class:`NoContactWarning`.
    """
    flags = np.asarray(gt.contact_flags, dtype=bool)
    if flags.shape != (generated.length,):
        raise ValueError(f"contact flags cover {flags.shape[0]} frames, generated clip has {generated.length}")
    if not flags.any():
        warnings.warn("no ground-truth contact frames; contact distance set to 0", NoContactWarning)
        return 0.0
    joint = generated.global_positions()[:, gt.contact_joint]
    local = to_object_frame(generated, joint)
    return float(np.abs(_primitive(generated).sdf(local[flags])).mean())


def capsule_offsets(n: int = SAMPLES_PER_BONE) -> tuple[np.ndarray, np.ndarray]:
    """Fractions along the bone and angles around it for the ``n`` samples of one bone.

    Samples sit at the centres of ``n`` equal segments, each turned a quarter
    turn from the previous, so they wind around the bone as a helix.
    """
    frac = (np.arange(n) + 0.5) / n
    angle = 0.5 * math.pi * np.arange(n)
    return frac, angle


def _perpendicular_frame(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors orthogonal to each unit direction in ``d`` (..., 3)."""
    helper = np.where(np.abs(d[..., 1:2]) < 0.9, np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    u = np.cross(d, helper)
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    return u, np.cross(d, u)


def body_surface_samples(joints: np.ndarray, spec: SkeletonSpec = DEFAULT_SKELETON,
                         radius: float = CAPSULE_RADIUS, n: int = SAMPLES_PER_BONE) -> np.ndarray:
    """Capsule surface samples for every bone: (L, bones * n, 3) from joints (L, J, 3)."""
    parents = np.array(spec.parents[1:])
    child = joints[:, 1:]
    start = joints[:, parents]
    bone = child - start
    length = np.linalg.norm(bone, axis=-1, keepdims=True)
    # zero-length bones get an arbitrary axis so their ring stays finite
    d = np.where(length > 1e-12, bone / np.maximum(length, 1e-12), np.array([0.0, 1.0, 0.0]))
    u, v = _perpendicular_frame(d)
    frac, angle = capsule_offsets(n)
    axis_pts = start[:, :, None] + frac[:, None] * bone[:, :, None]
    ring = np.cos(angle)[:, None] * u[:, :, None] + np.sin(angle)[:, None] * v[:, :, None]
    pts = axis_pts + radius * ring
    return pts.reshape(len(joints), -1, 3)


def penetration_score(clip: RawHOIClip, spec: SkeletonSpec = DEFAULT_SKELETON) -> float:
    """Fraction of body surface samples, over all frames, strictly inside the object."""
    pts = body_surface_samples(clip.global_positions(), spec)
    sdf = _primitive(clip).sdf(to_object_frame(clip, pts))
    return float((sdf < 0).mean())


def foot_skating_rate(clip: RawHOIClip, spec: SkeletonSpec = DEFAULT_SKELETON) -> float:
    """Fraction of frame transitions where some low foot joint slides horizontally.

    A transition t-1 -> t counts when a foot joint is below 5 cm at frame t and
    moved more than 2.5 cm on the ground plane.
    """
    if clip.length < 2:
        return 0.0
    feet = clip.global_positions()[:, list(spec.foot_joints)]
    slide = np.linalg.norm(np.diff(feet[..., [0, 2]], axis=0), axis=-1)
    low = feet[1:, :, 1] < FOOT_LOW
    return float(np.any(low & (slide > FOOT_SLIDE), axis=1).mean())


# ------------------------------------------------------------------- report
@dataclass(frozen=True)
class ClipMetrics:
    clip_id: str
    cd: float
    ps: float
    fsr: float
    no_contact: bool = False


def evaluate_pairs(gt: dict[str, RawHOIClip], generated: dict[str, RawHOIClip]) -> list[ClipMetrics]:
    """Metrics for every clip id present in both mappings; every id must pair."""
    missing = sorted(set(gt) ^ set(generated))
    if missing:
        raise KeyError(f"unpaired clip ids: {', '.join(missing)}")
    if not gt:
        raise ValueError("nothing to evaluate: no clip pairs")
    rows = []
    for cid in sorted(gt):
        g, x = gt[cid], generated[cid]
        flagged = bool(np.any(g.contact_flags))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoContactWarning)
            cd = contact_distance(g, x)
        rows.append(ClipMetrics(cid, cd, penetration_score(x), foot_skating_rate(x), not flagged))
    return rows


def summarize(rows: list[ClipMetrics]) -> dict[str, float]:
    return {
        "clips": len(rows),
        "CD": float(np.mean([r.cd for r in rows])),
        "PS": float(np.mean([r.ps for r in rows])),
        "FSR": float(np.mean([r.fsr for r in rows])),
        "no_contact": sum(r.no_contact for r in rows),
    }


def format_report(rows: list[ClipMetrics]) -> str:
    """Tab-separated ``clip_id CD PS FSR`` lines, then a JSON summary of corpus means."""
    lines = ["clip_id\tCD\tPS\tFSR"]
    lines += [f"{r.clip_id}\t{r.cd:.6f}\t{r.ps:.6f}\t{r.fsr:.6f}" for r in rows]
    return "\n".join(lines) + "\n" + json.dumps(summarize(rows), indent=2) + "\n"


def parse_report(text: str) -> tuple[list[ClipMetrics], dict[str, float]]:
    head, brace, tail = text.partition("{")
    rows = []
    for line in head.strip().splitlines()[1:]:
        cid, cd, ps, fsr = line.split("\t")
        rows.append(ClipMetrics(cid, float(cd), float(ps), float(fsr)))
    return rows, json.loads(brace + tail)
