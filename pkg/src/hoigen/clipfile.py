"""Binary clip container with a plain-text annotation sidecar.

Byte layout of ``<name>.hoi`` (all integers little-endian uint32):

    offset 0   8 bytes   magic b"HOICLIP\\0"
    offset 8   4 x u32   version, L, J_skel, P
    offset 24  u32       manifest length M in bytes
    offset 28  M bytes   UTF-8 manifest, one line per array: "<name> <d0>,<d1>,..."
    28 + M     payload   the arrays in manifest order, float32 little-endian, C order

``<name>.txt`` holds ``key=value`` lines: label, contact_joint, contact_flags
(a string of 0/1 per frame), object_kind, object_dims (comma separated).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .representation import RawHOIClip

MAGIC = b"HOICLIP\x00"
VERSION = 1
_HEADER = struct.Struct("<4I")
_ARRAYS = ("root_pos", "root_yaw", "local_pos", "joint_rot",
           "object_rot", "object_trans", "object_points")


class ClipFormatError(ValueError):
    pass


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".txt")


def clip_bytes(clip: RawHOIClip) -> bytes:
    arrays = [(name, getattr(clip, name)) for name in _ARRAYS]
    if clip.foot_contact is not None:
        arrays.append(("foot_contact", clip.foot_contact))
    manifest = "".join(
        f"{name} {','.join(str(d) for d in arr.shape)}\n" for name, arr in arrays).encode()
    parts = [MAGIC, _HEADER.pack(VERSION, clip.length, clip.n_joints, clip.object_points.shape[0]),
             struct.pack("<I", len(manifest)), manifest]
    parts += [np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in arrays]
    return b"".join(parts)


def sidecar_text(clip: RawHOIClip) -> str:
    flags = "".join("1" if f else "0" for f in clip.contact_flags)
    dims = ",".join(repr(float(d)) for d in clip.object_dims)
    return (f"label={clip.label}\ncontact_joint={clip.contact_joint}\n"
            f"contact_flags={flags}\nobject_kind={clip.object_kind}\nobject_dims={dims}\n")


def write_clip(path: str | Path, clip: RawHOIClip) -> None:
    path = Path(path)
    path.write_bytes(clip_bytes(clip))
    sidecar_path(path).write_text(sidecar_text(clip))


def parse_clip(blob: bytes, sidecar: str) -> RawHOIClip:
    if blob[:8] != MAGIC:
        raise ClipFormatError("not a clip container (bad magic)")
    version, length, n_joints, n_points = _HEADER.unpack_from(blob, 8)
    if version != VERSION:
        raise ClipFormatError(f"unsupported container version {version}")
    (mlen,) = struct.unpack_from("<I", blob, 24)
    manifest = blob[28:28 + mlen].decode()
    offset = 28 + mlen
    arrays = {}
    for line in manifest.splitlines():
        name, dims = line.split(" ")
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 4 * count > len(blob):
            raise ClipFormatError(f"payload truncated inside array {name!r}")
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
    if offset != len(blob):
        raise ClipFormatError(f"payload size mismatch: {len(blob) - offset} trailing bytes")
    missing = [name for name in _ARRAYS if name not in arrays]
    if missing:
        raise ClipFormatError(f"manifest lacks arrays: {', '.join(missing)}")
    meta = dict(line.split("=", 1) for line in sidecar.splitlines() if "=" in line)
    flags = np.array([c == "1" for c in meta.get("contact_flags", "")], dtype=bool)
    dims = tuple(float(d) for d in meta.get("object_dims", "").split(",") if d)
    clip = RawHOIClip(
        **{name: arrays[name].astype(float) for name in _ARRAYS},
        label=int(meta.get("label", 0)),
        contact_joint=int(meta.get("contact_joint", 0)),
        contact_flags=flags if flags.size == length else None,
        foot_contact=arrays["foot_contact"] > 0.5 if "foot_contact" in arrays else None,
        object_kind=meta.get("object_kind", "points"),
        object_dims=dims,
    )
    if clip.length != length or clip.n_joints != n_joints or clip.object_points.shape[0] != n_points:
        raise ClipFormatError("header does not match array shapes")
    return clip


def read_clip(path: str | Path) -> RawHOIClip:
    path = Path(path)
    side = sidecar_path(path)
    return parse_clip(path.read_bytes(), side.read_text() if side.exists() else "")
