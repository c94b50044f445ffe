"""Joint-level interaction denoiser.

Latents are kept joint-major, ``h`` of shape (B, J, L, D), for the temporal
and condition scans, and switched to frame-major (B, L, J, D) for the
per-frame spatial scan and the interaction attention. ``J`` counts the
skeleton joints plus the virtual contact joint, which is the last token.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import LayerNorm, Linear, Module, Parameter
from .autodiff.tensor import Tensor
from .conditions import TEXT_DIM, ConditionEncoder
from .representation import SMPL23_GROUPS, TOKEN_DIM
from .ssm import MambaConfig, MambaStack


def default_limb_groups(n_skeleton: int) -> tuple[tuple[int, ...], ...]:
    """Limb groups for a skeleton: the SMPL-like table for 23 joints, else contiguous splits."""
    if n_skeleton == 23:
        return SMPL23_GROUPS
    parts = np.array_split(np.arange(n_skeleton), min(5, n_skeleton))
    return tuple(tuple(int(i) for i in p) for p in parts if len(p))


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_modules: int = 6
    k: int = 3
    heads: int = 1
    n_joints: int = 24
    limb_groups: tuple[tuple[int, ...], ...] | None = None
    d_state: int = 16
    expand: int = 2
    d_conv: int = 4
    bidirectional: bool = True
    depth: int = 2
    n_steps: int = 1000
    text_dim: int = TEXT_DIM
    score_mode: str = "frame"           # "frame" or "sequence"
    freeze_masked: bool = True
    shared_separators: bool = True

    def __post_init__(self):
        if self.limb_groups is None:
            object.__setattr__(self, "limb_groups", default_limb_groups(self.n_joints - 1))
        else:
            object.__setattr__(self, "limb_groups", tuple(tuple(int(j) for j in g) for g in self.limb_groups))
        if self.k * self.n_modules > self.n_joints - 1:
            raise ValueError(
                f"k * n_modules = {self.k * self.n_modules} exceeds J - 1 = {self.n_joints - 1}: "
                "every frame must keep at least one visible joint")
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.score_mode not in ("frame", "sequence"):
            raise ValueError(f"score_mode must be 'frame' or 'sequence', got {self.score_mode!r}")

    @property
    def mamba(self) -> MambaConfig:
        return MambaConfig(self.d_model, self.d_state, self.expand, self.d_conv,
                           bidirectional=self.bidirectional)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["limb_groups"] = [list(g) for g in self.limb_groups]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in names}
        if d.get("limb_groups") is not None:
            d["limb_groups"] = tuple(tuple(g) for g in d["limb_groups"])
        return cls(**d)


@dataclass(frozen=True)
class LimbLayout:
    """Spatial scan order: limb groups separated by learned tokens.

    The virtual joint (index ``n_joints - 1``) is appended to the last two
    groups. Rows ``n_joints .. n_joints + n_sep - 1`` of the extended token
    set are the separators. ``order`` lists extended rows in scan order;
    ``first``/``second`` give, for each joint, its scan position (they differ
    only for the virtual joint).
    """

    n_joints: int
    groups: tuple[tuple[int, ...], ...]
    order: np.ndarray = field(repr=False)
    first: np.ndarray = field(repr=False)
    second: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, groups, n_joints: int) -> "LimbLayout":
        virtual = n_joints - 1
        groups = [list(g) for g in groups]
        if sorted(j for g in groups for j in g) != list(range(virtual)):
            raise ValueError("limb groups must cover every skeleton joint exactly once")
        if len(groups) >= 2:
            groups[-2].append(virtual)
        groups[-1].append(virtual)
        order: list[int] = []
        for i, g in enumerate(groups):
            if i:
                order.append(n_joints + i - 1)
            order.extend(g)
        order_arr = np.array(order, dtype=np.intp)
        pos = [np.flatnonzero(order_arr == j) for j in range(n_joints)]
        first = np.array([p[0] for p in pos], dtype=np.intp)
        second = np.array([p[-1] for p in pos], dtype=np.intp)
        return cls(n_joints, tuple(tuple(g) for g in groups), order_arr, first, second)

    @property
    def n_separators(self) -> int:
        return len(self.groups) - 1

    @property
    def length(self) -> int:
        return len(self.order)

    def is_separator(self) -> np.ndarray:
        return self.order >= self.n_joints

    def apply(self, h: Tensor, separators: Tensor, axis: int = -2) -> Tensor:
        """Reorder ``h`` (..., J, D) into scan order, inserting separators (n_sep, D)."""
        axis = axis % h.ndim
        shape = h.shape[:axis] + (self.n_separators,) + h.shape[axis + 1:]
        seps = F.broadcast_to(separators, shape)
        return F.gather(F.concat([h, seps], axis=axis), self.order, axis=axis)

    def invert(self, y: Tensor, axis: int = -2) -> Tensor:
        """Drop separators and return canonical joint order; duplicates are averaged."""
        a = F.gather(y, self.first, axis=axis)
        b = F.gather(y, self.second, axis=axis)
        return (a + b) * 0.5

    def apply_array(self, h: np.ndarray, separators: np.ndarray) -> np.ndarray:
        shape = h.shape[:-2] + separators.shape
        full = np.concatenate([h, np.broadcast_to(separators, shape)], axis=-2)
        return full[..., self.order, :]

    def invert_array(self, y: np.ndarray) -> np.ndarray:
        return 0.5 * (y[..., self.first, :] + y[..., self.second, :])


# ------------------------------------------------------------------- blocks
class DualHOIMamba(Module):
    """Temporal scans per joint and for the object, then a limb-ordered spatial scan per frame."""

    def __init__(self, cfg: ModelConfig, layout: LimbLayout, rng: np.random.Generator):
        self.human_temporal = MambaStack(cfg.mamba, cfg.depth, rng)
        self.object_temporal = MambaStack(cfg.mamba, cfg.depth, rng)
        self.spatial = MambaStack(cfg.mamba, cfg.depth, rng)
        self.layout = layout

    def temporal(self, h: Tensor, o: Tensor) -> tuple[Tensor, Tensor]:
        """``h`` joint-major (B, J, L, D), ``o`` (B, L, D)."""
        b, j, length, d = h.shape
        h = F.reshape(self.human_temporal(F.reshape(h, (b * j, length, d))), (b, j, length, d))
        return h, self.object_temporal(o)

    def spatial_scan(self, h: Tensor, separators: Tensor) -> Tensor:
        """``h`` frame-major (B, L, J, D)."""
        b, length, j, d = h.shape
        seq = self.layout.apply(h, separators)
        s = seq.shape[2]
        out = F.reshape(self.spatial(F.reshape(seq, (b * length, s, d))), (b, length, s, d))
        return self.layout.invert(out)


class ConditionInjector(Module):
    """Prepend condition tokens to each joint's and the object's sequence, scan, keep motion outputs."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.human = MambaStack(cfg.mamba, cfg.depth, rng)
        self.object = MambaStack(cfg.mamba, cfg.depth, rng)

    def forward(self, h: Tensor, o: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        """``h`` joint-major (B, J, L, D), ``o`` (B, L, D), ``cond`` (B, C, D)."""
        b, j, length, d = h.shape
        c = cond.shape[1]
        ch = F.broadcast_to(F.reshape(cond, (b, 1, c, d)), (b, j, c, d))
        hs = F.reshape(F.concat([ch, h], axis=2), (b * j, c + length, d))
        hs = F.reshape(self.human(hs), (b, j, c + length, d))[:, :, c:]
        os_ = self.object(F.concat([cond, o], axis=1))[:, c:]
        return hs, os_


class InteractionBlock(Module):
    """Masked attention over the object token and the J joint tokens of each frame.

    Token 0 is the object. Masked joint columns get ``-inf`` logits. With
    ``freeze`` set, masked joints keep their input features.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.norm = LayerNorm(d)
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.heads = cfg.heads
        self.freeze = cfg.freeze_masked

    def forward(self, h: Tensor, o: Tensor, visible: np.ndarray):
        """``h`` frame-major (B, L, J, D), ``o`` (B, L, D), ``visible`` (B, L, J) bool.

        Returns ``(h', o', scores, attn)``: ``scores`` (B, L, J) is the object
        row's attention over the joint columns averaged over heads, and
        ``attn`` (B, L, heads, J+1, J+1) the full attention weights.
        """
        b, length, j, d = h.shape
        if not np.all(visible.any(axis=-1)):
            raise ValueError("interaction block needs at least one visible joint per frame")
        nh, dh = self.heads, d // self.heads
        y = F.concat([F.reshape(o, (b, length, 1, d)), h], axis=2)
        x = self.norm(y)

        def split(t):
            return F.permute(F.reshape(t, (b, length, j + 1, nh, dh)), (0, 1, 3, 2, 4))

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        logits = F.matmul(q, F.permute(k, (0, 1, 2, 4, 3))) * (1.0 / math.sqrt(dh))
        keep = np.concatenate([np.ones((b, length, 1), dtype=bool), visible], axis=-1)
        bias = np.where(keep, 0.0, -np.inf)[:, :, None, None, :]
        attn = F.softmax(logits + bias.astype(logits.dtype), axis=-1)
        mixed = F.reshape(F.permute(F.matmul(attn, v), (0, 1, 3, 2, 4)), (b, length, j + 1, d))
        update = self.out(mixed)
        if self.freeze:
            update = update * keep[..., None].astype(update.dtype)
        y = y + update
        scores = attn.data[:, :, :, 0, 1:].mean(axis=2)
        return y[:, :, 1:], y[:, :, 0], scores, attn.data


def update_mask(visible: np.ndarray, scores: np.ndarray, k: int, mode: str = "frame") -> np.ndarray:
    """Mask the ``k`` visible joints with the lowest scores; ties go to the lower index.

    ``visible`` and ``scores`` are (..., L, J). In ``sequence`` mode scores are
    averaged over frames first and every frame masks the same joints (which
    requires a frame-independent visibility pattern).
    """
    visible = np.asarray(visible, dtype=bool)
    if k == 0:
        return visible.copy()
    if np.any(visible.sum(-1) < k + 1):
        raise ValueError(f"fewer than {k + 1} visible joints; cannot mask {k} more")
    if mode == "sequence":
        scores = np.broadcast_to(scores.mean(axis=-2, keepdims=True), scores.shape)
    ranked = np.where(visible, scores, np.inf)
    lowest = np.argsort(ranked, axis=-1, kind="stable")[..., :k]
    out = visible.copy()
    np.put_along_axis(out, lowest, False, axis=-1)
    return out


class JointInteractionModule(Module):
    def __init__(self, cfg: ModelConfig, layout: LimbLayout, rng: np.random.Generator):
        self.dhm = DualHOIMamba(cfg, layout, rng)
        self.dib1 = InteractionBlock(cfg, rng)
        self.dci = ConditionInjector(cfg, rng)
        self.dib2 = InteractionBlock(cfg, rng)
        self.separators = Parameter(rng.standard_normal((layout.n_separators, cfg.d_model)) * 0.02) \
            if not cfg.shared_separators else None

    def forward(self, h, o, cond, visible, separators):
        """``h`` joint-major; returns (h, o, scores from the second attention, aux)."""
        seps = self.separators if self.separators is not None else separators
        h, o = self.dhm.temporal(h, o)
        hf = self.dhm.spatial_scan(F.permute(h, (0, 2, 1, 3)), seps)
        hf, o, _, attn1 = self.dib1(hf, o, visible)
        h, o = self.dci(F.permute(hf, (0, 2, 1, 3)), o, cond)
        hf, o, scores, attn2 = self.dib2(F.permute(h, (0, 2, 1, 3)), o, visible)
        return F.permute(hf, (0, 2, 1, 3)), o, scores, (attn1, attn2)


@dataclass
class ForwardTrace:
    """Per-module visibility (entering each module), scores and attention weights."""

    visible: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    attention: list = field(default_factory=list)


class Denoiser(Module):
    """Predicts the clean sequence from a noisy one and condition tokens."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        self.layout = LimbLayout.build(cfg.limb_groups, cfg.n_joints)
        self.conditions = ConditionEncoder(d, cfg.n_steps, rng, cfg.text_dim)
        self.embed_human = Linear(TOKEN_DIM, d, rng)
        self.embed_object = Linear(TOKEN_DIM, d, rng)
        self.separators = Parameter(rng.standard_normal((self.layout.n_separators, d)) * 0.02)
        self.blocks = [JointInteractionModule(cfg, self.layout, rng) for _ in range(cfg.n_modules)]
        self.decode_human = Linear(d, TOKEN_DIM, rng)
        self.decode_object = Linear(d, TOKEN_DIM, rng)

    def project_in(self, xh: Tensor, xo: Tensor) -> tuple[Tensor, Tensor]:
        return self.embed_human(xh), self.embed_object(xo)

    def project_out(self, h: Tensor, o: Tensor) -> tuple[Tensor, Tensor]:
        return self.decode_human(h), self.decode_object(o)

    def forward(self, xh: Tensor, xo: Tensor, cond: Tensor, trace: ForwardTrace | None = None):
        """``xh`` (B, L, J, 12), ``xo`` (B, L, 12), ``cond`` (B, C, D) -> predicted clean pair."""
        b, length, j, _ = xh.shape
        if j != self.cfg.n_joints:
            raise F.ShapeError(f"denoiser built for {self.cfg.n_joints} joint tokens, got {j}")
        h, o = self.project_in(xh, xo)
        h = F.permute(h, (0, 2, 1, 3))
        visible = np.ones((b, length, j), dtype=bool)
        for block in self.blocks:
            if trace is not None:
                trace.visible.append(visible)
            h, o, scores, attn = block(h, o, cond, visible, self.separators)
            if trace is not None:
                trace.scores.append(scores)
                trace.attention.append(attn)
            visible = update_mask(visible, scores, self.cfg.k, self.cfg.score_mode)
        if trace is not None:
            trace.visible.append(visible)
        return self.project_out(F.permute(h, (0, 2, 1, 3)), o)
