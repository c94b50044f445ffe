"""Checkpoint files: a text manifest followed by a little-endian tensor payload.

Layout::

    HOICKPT 1
    config <json ModelConfig>
    meta <json run metadata>
    tensor <name> <dtype> <d0,d1,...> <offset> <nbytes>
    ...
    end
    <payload bytes>

Offsets are relative to the payload start. Tensors named ``stats.*`` hold
the normalization statistics; all others are model parameters. Each tensor
is stored in its own dtype (``<f8`` or ``<f4``) so a reload is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import Denoiser, ModelConfig
from .representation import NormStats

MAGIC = "HOICKPT 1"
_DTYPES = {"f8": "<f8", "f4": "<f4"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    stats: NormStats
    meta: dict = field(default_factory=dict)

    def build_model(self) -> Denoiser:
        model = Denoiser(self.config, np.random.default_rng(0))
        model.load_state_dict(self.params)
        return model


def _dtype_code(a: np.ndarray) -> str:
    if a.dtype == np.float64:
        return "f8"
    if a.dtype == np.float32:
        return "f4"
    raise CheckpointError(f"unsupported tensor dtype {a.dtype}")


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    tensors = dict(sorted(ckpt.params.items()))
    tensors.update({f"stats.{k}": v for k, v in ckpt.stats.as_arrays().items()})
    lines = [MAGIC,
             "config " + json.dumps(ckpt.config.to_dict(), sort_keys=True),
             "meta " + json.dumps(ckpt.meta, sort_keys=True)]
    chunks, offset = [], 0
    for name, value in tensors.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        value = np.asarray(value)
        code = _dtype_code(value)
        raw = np.ascontiguousarray(value, dtype=_DTYPES[code]).tobytes()
        shape = ",".join(str(d) for d in value.shape)
        lines.append(f"tensor {name} {code} {shape} {offset} {len(raw)}")
        chunks.append(raw)
        offset += len(raw)
    lines.append("end")
    return ("\n".join(lines) + "\n").encode() + b"".join(chunks)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def from_model(model: Denoiser, stats: NormStats, meta: dict | None = None) -> Checkpoint:
    params = {k: v.copy() for k, v in model.state_dict().items()}
    return Checkpoint(model.cfg, params, stats, dict(meta or {}))


def parse_checkpoint(blob: bytes) -> Checkpoint:
    end = blob.find(b"\nend\n")
    if not blob.startswith(MAGIC.encode() + b"\n") or end < 0:
        raise CheckpointError("not a checkpoint file (bad magic or missing manifest end)")
    payload = memoryview(blob)[end + 5:]
    config = meta = None
    tensors = {}
    for line in blob[:end].decode().splitlines()[1:]:
        key, _, rest = line.partition(" ")
        if key == "config":
            config = ModelConfig.from_dict(json.loads(rest))
        elif key == "meta":
            meta = json.loads(rest)
        elif key == "tensor":
            name, code, shape, offset, nbytes = rest.split(" ")
            if code not in _DTYPES:
                raise CheckpointError(f"{name}: unknown dtype code {code!r}")
            offset, nbytes = int(offset), int(nbytes)
            if offset + nbytes > len(payload):
                raise CheckpointError(f"{name}: payload truncated")
            dims = tuple(int(d) for d in shape.split(",")) if shape else ()
            arr = np.frombuffer(payload[offset:offset + nbytes], dtype=_DTYPES[code])
            tensors[name] = arr.reshape(dims).astype(arr.dtype.newbyteorder("="))
        else:
            raise CheckpointError(f"unknown manifest entry {key!r}")
    if config is None:
        raise CheckpointError("manifest has no config line")
    try:
        stats = NormStats(*(tensors.pop(f"stats.{k}")
                            for k in ("human_mean", "human_std", "obj_mean", "obj_std")))
    except KeyError as exc:
        raise CheckpointError(f"missing normalization tensor {exc}") from None
    return Checkpoint(config, tensors, stats, meta or {})


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return parse_checkpoint(path.read_bytes())
