"""Per-joint padded HOI representation.

Every token is a 12-vector. Layout per token kind:

    root      0:3 global position, 3 yaw rate, 4:6 world XZ velocity, 6 height
    joint     0:3 root-space position, 3:6 root-space velocity, 6:12 rotation (6-D)
    virtual   0:4 foot contact flags
    object    0:3 axis-angle rotation, 3:6 translation

Unused dims are exactly zero. Y is up. Velocities are backward differences
in units per frame; frame 0 repeats frame 1. The yaw rate at frame 0 is the
initial heading itself, so a cumulative sum recovers the absolute yaw.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

TOKEN_DIM = 12
CONTACT_HEIGHT = 0.05
CONTACT_SPEED = 0.005

SMPL23_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 15)
SMPL23_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "head_top",
)
SMPL23_GROUPS = (
    (0, 3, 6, 9, 12, 15, 22),
    (13, 16, 18, 20),
    (14, 17, 19, 21),
    (1, 4, 7, 10),
    (2, 5, 8, 11),
)
SMPL23_FEET = (7, 10, 8, 11)


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint tree, limb grouping and foot joints.

    ``limb_groups`` lists joints in scan order; the last two groups are the
    legs, which also receive the virtual contact joint.
    """

    parents: tuple[int, ...] = SMPL23_PARENTS
    names: tuple[str, ...] = SMPL23_NAMES
    limb_groups: tuple[tuple[int, ...], ...] = SMPL23_GROUPS
    foot_joints: tuple[int, ...] = SMPL23_FEET

    def __post_init__(self):
        n = len(self.parents)
        if len(self.names) != n:
            raise ValueError("names and parents differ in length")
        if self.parents[0] != -1 or any(not 0 <= p < i for i, p in enumerate(self.parents) if i):
            raise ValueError("parents must describe a tree rooted at joint 0 in topological order")
        members = sorted(j for g in self.limb_groups for j in g)
        if members != list(range(n)):
            raise ValueError("every joint must belong to exactly one limb group")
        legs = set(self.limb_groups[-1]) | set(self.limb_groups[-2])
        if len(self.foot_joints) != 4 or not set(self.foot_joints) <= legs:
            raise ValueError("four foot joints, all inside the two leg groups, are required")

    @property
    def n_joints(self) -> int:
        """Skeleton joints, without the virtual joint."""
        return len(self.parents)

    @property
    def n_tokens(self) -> int:
        """Joint tokens in the representation (skeleton plus virtual joint)."""
        return len(self.parents) + 1


DEFAULT_SKELETON = SkeletonSpec()


# ---------------------------------------------------------------- rotations
def rot6d_from_matrix(m: np.ndarray) -> np.ndarray:
    """First two columns of each 3x3 matrix, concatenated."""
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def matrix_from_rot6d(r6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the two stored columns back into a rotation matrix."""
    a, b = r6[..., :3], r6[..., 3:6]
    x = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-12)
    b = b - (x * b).sum(-1, keepdims=True) * x
    y = b / np.maximum(np.linalg.norm(b, axis=-1, keepdims=True), 1e-12)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def yaw_matrix(yaw: np.ndarray) -> np.ndarray:
    """Rotations about +Y, shape (..., 3, 3)."""
    c, s = np.cos(yaw), np.sin(yaw)
    zero, one = np.zeros_like(yaw), np.ones_like(yaw)
    return np.stack([
        np.stack([c, zero, s], -1),
        np.stack([zero, one, zero], -1),
        np.stack([-s, zero, c], -1),
    ], -2)


def wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2 * np.pi) - np.pi


def backward_diff(x: np.ndarray) -> np.ndarray:
    """Frame differences along axis 0; frame 0 repeats frame 1."""
    v = np.empty_like(x)
    v[1:] = x[1:] - x[:-1]
    v[0] = v[1]
    return v


# -------------------------------------------------------------------- clips
@dataclass
class RawHOIClip:
    """A human skeleton and one rigid object over ``L`` frames.

    Joint positions of non-root joints are in root space: the offset from the
    root, rotated by minus the root yaw. ``joint_rot`` holds 6-D rotations of
    the non-root joints. ``object_kind``/``object_dims`` describe the analytic
    primitive behind ``object_points`` when known.
    """

    root_pos: np.ndarray        # (L, 3)
    root_yaw: np.ndarray        # (L,)
    local_pos: np.ndarray       # (L, J-1, 3)
    joint_rot: np.ndarray       # (L, J-1, 6)
    object_rot: np.ndarray      # (L, 3) axis-angle
    object_trans: np.ndarray    # (L, 3)
    object_points: np.ndarray   # (P, 3) object frame
    label: int = 0
    contact_joint: int = 0
    contact_flags: np.ndarray | None = None   # (L,) bool
    foot_contact: np.ndarray | None = None    # (L, 4) bool
    object_kind: str = "points"
    object_dims: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.root_pos = np.asarray(self.root_pos, dtype=float)
        self.root_yaw = np.asarray(self.root_yaw, dtype=float)
        self.local_pos = np.asarray(self.local_pos, dtype=float)
        self.joint_rot = np.asarray(self.joint_rot, dtype=float)
        self.object_rot = np.asarray(self.object_rot, dtype=float)
        self.object_trans = np.asarray(self.object_trans, dtype=float)
        self.object_points = np.asarray(self.object_points, dtype=float)
        n = self.length
        if self.contact_flags is None:
            self.contact_flags = np.zeros(n, dtype=bool)
        self.contact_flags = np.asarray(self.contact_flags, dtype=bool)
        if self.foot_contact is not None:
            self.foot_contact = np.asarray(self.foot_contact, dtype=bool)
        self.object_dims = tuple(float(d) for d in self.object_dims)

    @property
    def length(self) -> int:
        return self.root_pos.shape[0]

    @property
    def n_joints(self) -> int:
        return self.local_pos.shape[1] + 1

    def validate(self, spec: SkeletonSpec | None = None) -> None:
        n, j = self.length, self.n_joints
        if n < 2:
            raise ValueError(f"clip has {n} frame(s); at least 2 are needed for velocities")
        if spec is not None and j != spec.n_joints:
            raise ValueError(f"clip has {j} joints, skeleton has {spec.n_joints}")
        expected = {
            "root_pos": (n, 3), "root_yaw": (n,), "local_pos": (n, j - 1, 3),
            "joint_rot": (n, j - 1, 6), "object_rot": (n, 3), "object_trans": (n, 3),
            "contact_flags": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.object_points.ndim != 2 or self.object_points.shape[1] != 3:
            raise ValueError(f"object_points must be (P, 3), got {self.object_points.shape}")
        if self.foot_contact is not None and self.foot_contact.shape != (n, 4):
            raise ValueError(f"foot_contact must be ({n}, 4), got {self.foot_contact.shape}")
        if not 0 <= self.contact_joint < j:
            raise ValueError(f"contact joint {self.contact_joint} outside [0, {j})")

    def global_positions(self) -> np.ndarray:
        """World joint positions, (L, J, 3)."""
        rot = yaw_matrix(self.root_yaw)
        world = np.einsum("lab,ljb->lja", rot, self.local_pos) + self.root_pos[:, None]
        return np.concatenate([self.root_pos[:, None], world], axis=1)

    def object_matrices(self) -> np.ndarray:
        return Rotation.from_rotvec(self.object_rot).as_matrix().reshape(-1, 3, 3)

    def object_world_points(self, frame: int) -> np.ndarray:
        return self.object_points @ self.object_matrices()[frame].T + self.object_trans[frame]


def local_from_global(root_pos: np.ndarray, root_yaw: np.ndarray, joints: np.ndarray) -> np.ndarray:
    """Root-space offsets of non-root joints from world positions (L, J, 3)."""
    rel = joints[:, 1:] - root_pos[:, None]
    return np.einsum("lba,ljb->lja", yaw_matrix(root_yaw), rel)


# --------------------------------------------------------------- sequences
@dataclass
class HOISequence:
    human: np.ndarray   # (L, J + 1, 12)
    obj: np.ndarray     # (L, 12)

    @property
    def length(self) -> int:
        return self.human.shape[0]

    def copy(self) -> "HOISequence":
        return HOISequence(self.human.copy(), self.obj.copy())

    def stacked(self) -> np.ndarray:
        """Object row prepended to the joint rows: (L, J + 2, 12)."""
        return np.concatenate([self.obj[:, None], self.human], axis=1)

    @classmethod
    def from_stacked(cls, x: np.ndarray) -> "HOISequence":
        return cls(np.ascontiguousarray(x[:, 1:]), np.ascontiguousarray(x[:, 0]))


def validity_layout(spec: SkeletonSpec = DEFAULT_SKELETON) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of live dims: ``(human (J+1, 12), object (12,))``."""
    human = np.zeros((spec.n_tokens, TOKEN_DIM), dtype=bool)
    human[0, :7] = True
    human[1:spec.n_joints] = True
    human[spec.n_joints, :4] = True
    obj = np.zeros(TOKEN_DIM, dtype=bool)
    obj[:6] = True
    return human, obj


def detect_foot_contact(raw: RawHOIClip, spec: SkeletonSpec = DEFAULT_SKELETON,
                        height: float = CONTACT_HEIGHT, speed: float = CONTACT_SPEED) -> np.ndarray:
    """Contact when a foot joint is below ``height`` and moves less than ``speed`` per frame."""
    feet = raw.global_positions()[:, list(spec.foot_joints)]
    step = np.linalg.norm(backward_diff(feet), axis=-1)
    return (feet[..., 1] < height) & (step < speed)


def encode_clip(raw: RawHOIClip, spec: SkeletonSpec = DEFAULT_SKELETON) -> HOISequence:
    raw.validate(spec)
    n, j = raw.length, spec.n_joints
    human = np.zeros((n, j + 1, TOKEN_DIM))
    obj = np.zeros((n, TOKEN_DIM))

    yaw_rate = np.empty(n)
    yaw_rate[0] = raw.root_yaw[0]
    yaw_rate[1:] = wrap_angle(np.diff(raw.root_yaw))
    human[:, 0, 0:3] = raw.root_pos
    human[:, 0, 3] = yaw_rate
    human[:, 0, 4:6] = backward_diff(raw.root_pos[:, [0, 2]])
    human[:, 0, 6] = raw.root_pos[:, 1]

    human[:, 1:j, 0:3] = raw.local_pos
    human[:, 1:j, 3:6] = backward_diff(raw.local_pos)
    human[:, 1:j, 6:12] = raw.joint_rot

    contact = raw.foot_contact if raw.foot_contact is not None else detect_foot_contact(raw, spec)
    human[:, j, 0:4] = contact

    obj[:, 0:3] = raw.object_rot
    obj[:, 3:6] = raw.object_trans
    return HOISequence(human, obj)


def decode_sequence(seq: HOISequence, spec: SkeletonSpec = DEFAULT_SKELETON,
                    template: RawHOIClip | None = None) -> RawHOIClip:
    """Inverse of :func:`encode_clip`; padding and redundant dims are ignored.

    Root positions come from the global-position dims and yaw from the
    cumulative yaw rate. Annotations (point cloud, label, contact joint and
    flags, object metadata) are copied from ``template`` when given.
    """
    j = spec.n_joints
    h, o = np.asarray(seq.human, dtype=float), np.asarray(seq.obj, dtype=float)
    n = h.shape[0]
    joint_rot = rot6d_from_matrix(matrix_from_rot6d(h[:, 1:j, 6:12]))
    kwargs = dict(
        root_pos=h[:, 0, 0:3].copy(),
        root_yaw=np.cumsum(h[:, 0, 3]),
        local_pos=h[:, 1:j, 0:3].copy(),
        joint_rot=joint_rot,
        object_rot=o[:, 0:3].copy(),
        object_trans=o[:, 3:6].copy(),
        foot_contact=h[:, j, 0:4] > 0.5,
    )
    if template is None:
        return RawHOIClip(object_points=np.zeros((1, 3)), **kwargs)
    flags = template.contact_flags
    if flags.shape[0] != n:
        flags = np.zeros(n, dtype=bool)
    return RawHOIClip(
        object_points=template.object_points.copy(), label=template.label,
        contact_joint=template.contact_joint, contact_flags=flags.copy(),
        object_kind=template.object_kind, object_dims=template.object_dims,
        meta=dict(template.meta), **kwargs)


# ------------------------------------------------------------ normalization
@dataclass
class NormStats:
    human_mean: np.ndarray   # (J+1, 12)
    human_std: np.ndarray
    obj_mean: np.ndarray     # (12,)
    obj_std: np.ndarray

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {"human_mean": self.human_mean, "human_std": self.human_std,
                "obj_mean": self.obj_mean, "obj_std": self.obj_std}


def compute_stats(seqs: list[HOISequence], spec: SkeletonSpec = DEFAULT_SKELETON,
                  floor: float = 1e-6) -> NormStats:
    """Per-(token, dim) mean and std over all frames; padded dims get (0, 1)."""
    human = np.concatenate([s.human for s in seqs], axis=0)
    obj = np.concatenate([s.obj for s in seqs], axis=0)
    live_h, live_o = validity_layout(spec)
    hm, hs = human.mean(0), np.maximum(human.std(0), floor)
    om, os_ = obj.mean(0), np.maximum(obj.std(0), floor)
    hm[~live_h], hs[~live_h] = 0.0, 1.0
    om[~live_o], os_[~live_o] = 0.0, 1.0
    return NormStats(hm, hs, om, os_)


def normalize(seq: HOISequence, stats: NormStats) -> HOISequence:
    return HOISequence((seq.human - stats.human_mean) / stats.human_std,
                       (seq.obj - stats.obj_mean) / stats.obj_std)


def denormalize(seq: HOISequence, stats: NormStats) -> HOISequence:
    return HOISequence(seq.human * stats.human_std + stats.human_mean,
                       seq.obj * stats.obj_std + stats.obj_mean)


def with_length(raw: RawHOIClip, start: int, stop: int) -> RawHOIClip:
    """Frames ``start:stop`` of a clip."""
    sl = slice(start, stop)
    return replace(
        raw, root_pos=raw.root_pos[sl], root_yaw=raw.root_yaw[sl], local_pos=raw.local_pos[sl],
        joint_rot=raw.joint_rot[sl], object_rot=raw.object_rot[sl],
        object_trans=raw.object_trans[sl], contact_flags=raw.contact_flags[sl],
        foot_contact=None if raw.foot_contact is None else raw.foot_contact[sl],
        meta=dict(raw.meta))
