"""Shared fixtures-by-function for the test modules."""

import numpy as np
from scipy.spatial.transform import Rotation

from hoigen.representation import RawHOIClip, rot6d_from_matrix


def random_clip(rng: np.random.Generator, length: int = 8, n_joints: int = 23,
                n_points: int = 16) -> RawHOIClip:
    """Arbitrary but valid clip: random trajectories, rotations and annotations."""
    rot = Rotation.random(length * (n_joints - 1), random_state=int(rng.integers(1 << 30)))
    return RawHOIClip(
        root_pos=rng.normal(0, 1, (length, 3)),
        root_yaw=rng.uniform(-np.pi, np.pi, length),
        local_pos=rng.normal(0, 0.5, (length, n_joints - 1, 3)),
        joint_rot=rot6d_from_matrix(rot.as_matrix()).reshape(length, n_joints - 1, 6),
        object_rot=rng.normal(0, 1, (length, 3)),
        object_trans=rng.normal(0, 1, (length, 3)),
        object_points=rng.normal(0, 0.2, (n_points, 3)),
        label=int(rng.integers(0, 8)),
        contact_joint=int(rng.integers(0, n_joints)),
        contact_flags=rng.random(length) < 0.5,
        foot_contact=rng.random((length, 4)) < 0.5,
        object_kind="box", object_dims=(0.3, 0.4, 0.5),
    )


def clip_from_joints(joints, kind="sphere", dims=(1.0,), object_trans=None, object_rot=None,
                     contact_joint=0, contact_flags=None) -> RawHOIClip:
    """Clip with zero yaw whose global joint positions are exactly ``joints`` (L, 23, 3)."""
    joints = np.asarray(joints, dtype=float)
    n = len(joints)
    return RawHOIClip(
        root_pos=joints[:, 0], root_yaw=np.zeros(n), local_pos=joints[:, 1:] - joints[:, :1],
        joint_rot=np.tile([1.0, 0, 0, 0, 1, 0], (n, joints.shape[1] - 1, 1)),
        object_rot=np.zeros((n, 3)) if object_rot is None else object_rot,
        object_trans=np.zeros((n, 3)) if object_trans is None else object_trans,
        object_points=np.zeros((1, 3)), label=0, contact_joint=contact_joint,
        contact_flags=np.ones(n, bool) if contact_flags is None else contact_flags,
        foot_contact=np.zeros((n, 4), bool), object_kind=kind, object_dims=tuple(dims))
