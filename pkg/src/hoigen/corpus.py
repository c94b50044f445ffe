"""Procedural human-object interaction clips.

Each template animates a 23-joint skeleton in a heading frame (X left,
Y up, Z forward) with a few smooth control signals: pelvis path, torso
lean, footstep targets and wrist targets. Knees and elbows come from
two-bone IK. The designated contact joint is pinned at ``CONTACT_GAP``
from the object surface during contact frames, and the object moves by
exactly the contact joint's displacement while they touch. The heading
frame is then rotated by a random yaw and shifted to a random origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .clipfile import read_clip, write_clip
from .primitives import PrimitiveObject
from .representation import (
    DEFAULT_SKELETON, RawHOIClip, local_from_global, rot6d_from_matrix, yaw_matrix,
)

CONTACT_GAP = 0.008
N_POINTS = 256
MIN_LENGTH = 10
STAND_HEIGHT = 0.88
ANKLE_HEIGHT = 0.045

# rest offsets from each joint's parent, heading frame
REST_OFFSETS = np.array([
    [0.0, 0.0, 0.0],
    [0.09, -0.07, 0.0], [-0.09, -0.07, 0.0], [0.0, 0.11, -0.01],
    [0.01, -0.39, 0.0], [-0.01, -0.39, 0.0], [0.0, 0.13, 0.0],
    [0.0, -0.40, -0.02], [0.0, -0.40, -0.02], [0.0, 0.05, 0.02],
    [0.0, -0.04, 0.12], [0.0, -0.04, 0.12], [0.0, 0.21, -0.02],
    [0.07, 0.12, -0.01], [-0.07, 0.12, -0.01], [0.0, 0.09, 0.04],
    [0.11, 0.03, -0.01], [-0.11, 0.03, -0.01],
    [0.0, -0.26, 0.0], [0.0, -0.26, 0.0],
    [0.0, -0.25, 0.0], [0.0, -0.25, 0.0],
    [0.0, 0.12, 0.0],
])
THIGH = float(np.linalg.norm(REST_OFFSETS[4]))
SHIN = float(np.linalg.norm(REST_OFFSETS[7]))
UPPER_ARM = float(np.linalg.norm(REST_OFFSETS[18]))
FOREARM = float(np.linalg.norm(REST_OFFSETS[20]))
FOOT = REST_OFFSETS[10]

LABELS = (
    ("push", "box"), ("push", "cylinder"),
    ("lift", "box"), ("lift", "sphere"), ("lift", "cylinder"),
    ("sit", "box"), ("sit", "cylinder"),
    ("kick", "sphere"),
)
LABEL_NAMES = tuple(
    f"{t} the {k}" if t != "sit" else f"sit on the {k}" for t, k in LABELS)
TEMPLATES = ("push", "lift", "sit", "kick")
CONTACT_JOINTS = {"push": 21, "lift": 21, "sit": 0, "kick": 11}


def label_id(template: str, kind: str) -> int:
    try:
        return LABELS.index((template, kind))
    except ValueError:
        raise ValueError(f"no label for template {template!r} with a {kind}") from None


@dataclass(frozen=True)
class SceneScript:
    template: str
    kind: str
    length: int = 32
    seed: int = 0
    dims: tuple[float, ...] | None = None


# ------------------------------------------------------------------ helpers
def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def ramp(u, start, stop):
    return smoothstep((u - start) / (stop - start))


def two_bone_ik(root, target, l1, l2, pole):
    """Middle-joint position and reached end position for chains (L, 3).

    ``pole`` (L, 3) or (3,) sets the bending plane. Raises if a target is out
    of reach by more than a millimetre, because pinned contacts would break.
    """
    d = target - root
    dist = np.linalg.norm(d, axis=-1, keepdims=True)
    reach = l1 + l2
    if np.any(dist > reach + 1e-3):
        raise ValueError(f"IK target out of reach by {float((dist - reach).max()):.3f} m")
    dist_c = np.clip(dist, abs(l1 - l2) + 1e-6, reach - 1e-9)
    x = d / np.maximum(dist, 1e-12)
    p = np.broadcast_to(pole, d.shape)
    y = p - (p * x).sum(-1, keepdims=True) * x
    y = y / np.linalg.norm(y, axis=-1, keepdims=True)
    cos_a = (l1 * l1 + dist_c * dist_c - l2 * l2) / (2 * l1 * dist_c)
    sin_a = np.sqrt(np.maximum(1 - cos_a * cos_a, 0.0))
    mid = root + l1 * (cos_a * x + sin_a * y)
    return mid, root + x * dist_c


def lean_rotation(angle):
    """Forward bend about +X for each frame: (L, 3, 3)."""
    c, s = np.cos(angle), np.sin(angle)
    one, zero = np.ones_like(angle), np.zeros_like(angle)
    return np.stack([
        np.stack([one, zero, zero], -1),
        np.stack([zero, c, -s], -1),
        np.stack([zero, s, c], -1),
    ], -2)


def assemble(pelvis, lean, ankles, wrists):
    """Joint positions (L, 23, 3) in the heading frame.

    ``ankles`` and ``wrists`` map 'left'/'right' to (L, 3) targets; feet keep
    a fixed forward orientation.
    """
    n = pelvis.shape[0]
    rot = lean_rotation(lean)
    j = np.zeros((n, 23, 3))
    j[:, 0] = pelvis

    def up(parent, child):
        j[:, child] = j[:, parent] + np.einsum("lab,b->la", rot, REST_OFFSETS[child])

    for parent, child in ((0, 3), (3, 6), (6, 9), (9, 12), (12, 15), (15, 22),
                          (9, 13), (9, 14), (13, 16), (14, 17)):
        up(parent, child)
    for side, hip, knee, ankle, toe in (("left", 1, 4, 7, 10), ("right", 2, 5, 8, 11)):
        j[:, hip] = pelvis + REST_OFFSETS[hip]
        knee_pos, ankle_pos = two_bone_ik(j[:, hip], ankles[side], THIGH, SHIN, np.array([0, 0, 1.0]))
        j[:, knee], j[:, ankle] = knee_pos, ankle_pos
        j[:, toe] = ankle_pos + FOOT
    for side, sign, shoulder, elbow, wrist in (("left", 1.0, 16, 18, 20), ("right", -1.0, 17, 19, 21)):
        pole = np.array([0.6 * sign, -1.0, -0.4])
        elbow_pos, wrist_pos = two_bone_ik(j[:, shoulder], wrists[side], UPPER_ARM, FOREARM, pole)
        j[:, elbow], j[:, wrist] = elbow_pos, wrist_pos
    return j


def shoulder_positions(pelvis, lean):
    rot = lean_rotation(lean)
    chain = REST_OFFSETS[3] + REST_OFFSETS[6] + REST_OFFSETS[9]
    out = {}
    for side, collar, shoulder in (("left", 13, 16), ("right", 14, 17)):
        off = chain + REST_OFFSETS[collar] + REST_OFFSETS[shoulder]
        out[side] = pelvis + np.einsum("lab,b->la", rot, off)
    return out


def hanging_wrists(pelvis, lean, swing=None):
    """Relaxed arms: wrists below the shoulders, optionally swinging along Z."""
    sh = shoulder_positions(pelvis, lean)
    out = {}
    for side, sign in (("left", 1.0), ("right", -1.0)):
        w = sh[side] + np.array([0.06 * sign, -0.47, 0.04])
        if swing is not None:
            w = w + np.stack([np.zeros_like(swing), np.zeros_like(swing), -sign * swing], -1)
        out[side] = w
    return out


def plan_steps(root_z, lateral, n_cycles, lift=0.08, lead=0.1):
    """Alternating footsteps following a forward pelvis path.

    Returns ankle targets per side (L, 3) and the stance mask per side (L,):
    a frame is stance when its foot has not moved since the previous frame.
    """
    n = len(root_z)
    period = (n - 2) / n_cycles
    ankles, stance = {}, {}
    for side, sign, offset in (("left", 1.0, 0.0), ("right", -1.0, 0.5)):
        z = np.full(n, root_z[0])
        y = np.full(n, ANKLE_HEIGHT)
        moving = np.zeros(n, dtype=bool)
        planted = root_z[0]
        for c in range(n_cycles):
            # integer bounds, starting after frame 0 whose velocity copies frame 1
            s0 = 1 + int(round((c + offset) * period))
            s1 = max(s0 + 1, 1 + int(round((c + offset + 0.5) * period)))
            land = root_z[min(int(round(s1)), n - 1)] + lead
            for t in range(n):
                if s0 < t <= s1:
                    p = (t - s0) / (s1 - s0)
                    z[t] = planted + (land - planted) * smoothstep(p)
                    y[t] = ANKLE_HEIGHT + lift * math.sin(math.pi * p)
                    moving[t] = True
                elif t > s1:
                    z[t] = land
            planted = land
        ankles[side] = np.stack([np.full(n, sign * lateral), y, z], -1)
        stance[side] = ~moving
    return ankles, stance


# ---------------------------------------------------------------- templates
def _sample_dims(template: str, kind: str, rng: np.random.Generator) -> tuple[float, ...]:
    if template == "push":
        if kind == "box":
            return (rng.uniform(0.5, 0.7), rng.uniform(1.15, 1.3), rng.uniform(0.4, 0.6))
        return (rng.uniform(0.25, 0.35), rng.uniform(1.15, 1.3))
    if template == "lift":
        if kind == "box":
            return (rng.uniform(0.25, 0.35), rng.uniform(0.2, 0.3), rng.uniform(0.2, 0.3))
        if kind == "sphere":
            return (rng.uniform(0.12, 0.16),)
        return (rng.uniform(0.12, 0.16), rng.uniform(0.2, 0.3))
    if template == "sit":
        if kind == "box":
            return (rng.uniform(0.4, 0.5), rng.uniform(0.42, 0.5), rng.uniform(0.4, 0.5))
        return (rng.uniform(0.22, 0.28), rng.uniform(0.42, 0.5))
    return (rng.uniform(0.11, 0.14),)


def _half_x(obj: PrimitiveObject) -> float:
    return float(obj.bounding_half_extent()[0])


def _push(u, obj, rng):
    n = len(u)
    travel = rng.uniform(0.5, 0.7)
    root_z = travel * u
    bob = 0.01 * np.cos(2 * math.pi * 2 * u)
    pelvis = np.stack([np.zeros(n), STAND_HEIGHT - 0.01 + bob, root_z], -1)
    lean = np.full(n, 0.15)
    ankles, stance = plan_steps(root_z, 0.11, n_cycles=2, lead=travel / 8)
    u_c = 0.3
    hang = hanging_wrists(pelvis, lean, swing=0.06 * np.sin(2 * math.pi * 2 * u))
    blend = ramp(u, 0.0, u_c)[:, None]
    wrists = {}
    for side, sign in (("left", 1.0), ("right", -1.0)):
        push_pose = pelvis + np.array([0.17 * sign, 0.12, 0.36])
        wrists[side] = (1 - blend) * hang[side] + blend * push_pose
    joints = assemble(pelvis, lean, ankles, wrists)
    contact = u >= u_c
    t_c = int(np.argmax(contact))
    w = joints[:, 21]
    if obj.kind == "box":
        cx = 0.0
        depth = obj.dims[2]
    else:
        cx = w[t_c, 0]
        depth = 2 * obj.dims[0]
    height = obj.dims[1]
    center0 = np.array([cx, 0.5 * height, w[t_c, 2] + CONTACT_GAP + 0.5 * depth])
    center = np.where(contact[:, None], center0 + (w - w[t_c]), center0)
    rotvec = np.zeros((n, 3))
    return joints, center, rotvec, contact, stance


def _lift(u, obj, rng):
    n = len(u)
    hx = _half_x(obj)
    hy = float(obj.bounding_half_extent()[1])
    table = rng.uniform(0.62, 0.68)
    start = np.array([0.0, table + hy, rng.uniform(0.36, 0.42)])
    carry = np.array([0.0, rng.uniform(0.95, 1.05), 0.33])
    u_c = 0.4
    down = ramp(u, 0.0, u_c)
    rise = ramp(u, u_c, 1.0)
    pelvis = np.stack([np.zeros(n), STAND_HEIGHT - 0.18 * down + 0.16 * rise, -0.03 * down], -1)
    lean = 0.05 + 0.35 * down - 0.3 * rise
    center = start + rise[:, None] * (carry - start)
    hang = hanging_wrists(pelvis, lean)
    wrists = {}
    for side, sign in (("left", 1.0), ("right", -1.0)):
        grip = center + np.array([sign * (hx + CONTACT_GAP), 0.0, 0.0])
        wrists[side] = np.where((u < u_c)[:, None], (1 - down[:, None]) * hang[side] + down[:, None] * grip, grip)
    feet = {s: np.tile([sg * 0.12, ANKLE_HEIGHT, 0.0], (n, 1)) for s, sg in (("left", 1.0), ("right", -1.0))}
    joints = assemble(pelvis, lean, feet, wrists)
    contact = u >= u_c
    stance = {"left": np.ones(n, dtype=bool), "right": np.ones(n, dtype=bool)}
    return joints, center, np.zeros((n, 3)), contact, stance


def _sit(u, obj, rng):
    n = len(u)
    seat = obj.dims[1]
    back = rng.uniform(0.28, 0.32)
    center = np.tile([0.0, 0.5 * seat, -back], (n, 1))
    s = ramp(u, 0.15, 0.65)
    seated = np.array([0.0, seat + CONTACT_GAP, -back + 0.05])
    standing = np.array([0.0, STAND_HEIGHT, 0.0])
    pelvis = standing + s[:, None] * (seated - standing)
    lean = 0.1 + 0.45 * np.sin(math.pi * s)
    feet = {sd: np.tile([sg * 0.12, ANKLE_HEIGHT, 0.1], (n, 1)) for sd, sg in (("left", 1.0), ("right", -1.0))}
    joints = assemble(pelvis, lean, feet, hanging_wrists(pelvis, lean))
    contact = u >= 0.65
    stance = {"left": np.ones(n, dtype=bool), "right": np.ones(n, dtype=bool)}
    return joints, center, np.zeros((n, 3)), contact, stance


def _kick(u, obj, rng):
    n = len(u)
    r = obj.dims[0]
    ball0 = np.array([-0.12, r, rng.uniform(0.34, 0.38)])
    pelvis = np.stack([np.zeros(n), STAND_HEIGHT - 0.02 * np.sin(math.pi * u), -0.03 * np.sin(math.pi * u)], -1)
    lean = -0.05 * np.sin(math.pi * u)
    rest = np.array([-0.12, ANKLE_HEIGHT, 0.0])
    back = np.array([-0.12, 0.2, -0.2])
    strike_toe = ball0 + np.array([0.0, 0.0, -(r + CONTACT_GAP)])
    strike = strike_toe - FOOT
    follow = strike + np.array([0.0, 0.0, 0.08])
    land = np.array([-0.12, ANKLE_HEIGHT, 0.2])
    a = ramp(u, 0.1, 0.35)[:, None]
    b = ramp(u, 0.35, 0.5)[:, None]
    c = np.clip((u - 0.5) / 0.1, 0.0, 1.0)[:, None]
    d = ramp(u, 0.6, 0.8)[:, None]
    right = rest + a * (back - rest)
    right = np.where(u[:, None] > 0.35, back + b * (strike - back), right)
    right = np.where(u[:, None] > 0.5, strike + c * (follow - strike), right)
    right = np.where(u[:, None] > 0.6, follow + d * (land - follow), right)
    feet = {"left": np.tile([0.12, ANKLE_HEIGHT, 0.0], (n, 1)), "right": right}
    joints = assemble(pelvis, lean, feet, hanging_wrists(pelvis, lean, swing=0.08 * np.sin(math.pi * u)))
    contact = (u >= 0.5) & (u <= 0.6 + 1e-9)
    toe = joints[:, 11]
    t_c = int(np.argmax(contact))
    t_end = int(np.flatnonzero(contact)[-1])
    # the ball rides just ahead of the toe while they touch, then rolls on
    z = np.full(n, ball0[2])
    z[contact] = toe[contact, 2] + r + CONTACT_GAP
    roll_speed = max((z[t_end] - z[t_c]) / max(t_end - t_c, 1), 0.01)
    after = np.arange(n) > t_end
    z[after] = z[t_end] + roll_speed * (np.arange(n)[after] - t_end)
    center = np.tile(ball0, (n, 1))
    center[:, 2] = z
    rotvec = np.zeros((n, 3))
    rotvec[:, 0] = (z - ball0[2]) / r
    moving = np.zeros(n, dtype=bool)
    moving[1:] = np.linalg.norm(np.diff(right, axis=0), axis=-1) > 0
    stance = {"left": np.ones(n, dtype=bool), "right": ~moving}
    return joints, center, rotvec, contact, stance


_TEMPLATES = {"push": _push, "lift": _lift, "sit": _sit, "kick": _kick}


def joint_rotations(local: np.ndarray) -> np.ndarray:
    """6-D rotations taking each rest bone direction onto its current direction (root space)."""
    parents = DEFAULT_SKELETON.parents
    full = np.concatenate([np.zeros_like(local[:, :1]), local], axis=1)
    bones = full[:, 1:] - full[:, list(parents[1:])]
    rest = REST_OFFSETS[1:] / np.linalg.norm(REST_OFFSETS[1:], axis=-1, keepdims=True)
    cur = bones / np.linalg.norm(bones, axis=-1, keepdims=True)
    rest = np.broadcast_to(rest, cur.shape)
    v = np.cross(rest, cur)
    c = (rest * cur).sum(-1)
    k = np.zeros(cur.shape[:-1] + (3, 3))
    k[..., 0, 1], k[..., 0, 2] = -v[..., 2], v[..., 1]
    k[..., 1, 0], k[..., 1, 2] = v[..., 2], -v[..., 0]
    k[..., 2, 0], k[..., 2, 1] = -v[..., 1], v[..., 0]
    scale = 1.0 / np.maximum(1.0 + c, 1e-9)
    m = np.eye(3) + k + np.einsum("...ij,...jk->...ik", k, k) * scale[..., None, None]
    return rot6d_from_matrix(m)


def generate_clip(script: SceneScript) -> RawHOIClip:
    if script.template not in _TEMPLATES:
        raise ValueError(f"unknown template {script.template!r}; expected one of {TEMPLATES}")
    if script.length < MIN_LENGTH:
        raise ValueError(f"generated clips need at least {MIN_LENGTH} frames to fit the footstep plan, "
                         f"got {script.length}")
    label = label_id(script.template, script.kind)
    rng = np.random.default_rng([script.seed, label])
    dims = script.dims if script.dims is not None else _sample_dims(script.template, script.kind, rng)
    obj = PrimitiveObject(script.kind, tuple(float(d) for d in dims))
    u = np.linspace(0.0, 1.0, script.length)
    joints, center, rotvec, contact, stance = _TEMPLATES[script.template](u, obj, rng)

    heading = rng.uniform(-math.pi, math.pi)
    origin = np.array([rng.uniform(-1, 1), 0.0, rng.uniform(-1, 1)])
    rot = yaw_matrix(np.array(heading))
    world = joints @ rot.T + origin
    root_pos = world[:, 0]
    yaw = np.full(script.length, heading)
    local = local_from_global(root_pos, yaw, world)
    obj_rot = (Rotation.from_rotvec(np.array([0.0, heading, 0.0])) * Rotation.from_rotvec(rotvec)).as_rotvec()
    foot = np.stack([stance["left"], stance["left"], stance["right"], stance["right"]], -1)
    foot &= (world[:, list(DEFAULT_SKELETON.foot_joints), 1] < 0.05)
    return RawHOIClip(
        root_pos=root_pos, root_yaw=yaw, local_pos=local, joint_rot=joint_rotations(local),
        object_rot=obj_rot.reshape(-1, 3), object_trans=center @ rot.T + origin,
        object_points=obj.surface_points(N_POINTS, rng), label=label,
        contact_joint=CONTACT_JOINTS[script.template], contact_flags=contact,
        foot_contact=foot, object_kind=obj.kind, object_dims=obj.dims,
        meta={"template": script.template, "seed": script.seed},
    )


def corpus_scripts(n: int, length: int = 32, seed: int = 0) -> list[SceneScript]:
    """``n`` scripts cycling through every (template, object) label."""
    return [SceneScript(t, k, length, seed * 100003 + i)
            for i, (t, k) in ((i, LABELS[i % len(LABELS)]) for i in range(n))]


def generate_corpus(n: int, length: int = 32, seed: int = 0) -> list[RawHOIClip]:
    return [generate_clip(s) for s in corpus_scripts(n, length, seed)]


def write_corpus(directory: str | Path, clips: list[RawHOIClip], prefix: str = "clip") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, clip in enumerate(clips):
        path = directory / f"{prefix}_{i:04d}.hoi"
        write_clip(path, clip)
        paths.append(path)
    (directory / "labels.tsv").write_text(
        "".join(f"{i}\t{name}\n" for i, name in enumerate(LABEL_NAMES)))
    return paths


def read_corpus(directory: str | Path) -> dict[str, RawHOIClip]:
    """Clips keyed by file stem, in sorted order."""
    paths = sorted(Path(directory).glob("*.hoi"))
    return {p.stem: read_clip(p) for p in paths}
