"""Scaling benchmark: the factored interaction pathway against naive full-token attention.

The factored pathway handles L frames of J joint tokens plus one object token
with temporal scans over each token's trajectory, a spatial scan over each
frame's limb-ordered joints, and per-frame attention over J + 1 tokens. The
naive baseline attends over all L * J joint tokens at once.

FLOP counts are analytic: matmuls count 2 per multiply-add, softmax counts 5
per logit (max, subtract, exp, sum, divide). The naive count is its attention
core (logits, softmax, weighted sum), which is exactly quadratic in the token
count; the factored count is every operation of the pathway, all linear in L.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass

import numpy as np

from .autodiff.tensor import Tensor, no_grad
from .network import InteractionBlock, LimbLayout, ModelConfig, default_limb_groups
from .ssm import MambaBlock, block_flops

DEFAULT_GRID = (64, 128, 256, 512)
CSV_FIELDS = ("L", "tokens", "flops_ejim", "flops_naive", "time_ejim", "time_naive")


def attention_core_flops(n_tokens: int, d: int) -> int:
    """Logits, softmax and weighted sum of one attention layer over ``n_tokens``."""
    return n_tokens * n_tokens * (4 * d + 5)


def interaction_flops(length: int, n_joints: int, d: int) -> int:
    """Per-frame attention over the object plus ``n_joints`` tokens, with its four projections."""
    tokens = n_joints + 1
    return length * (attention_core_flops(tokens, d) + tokens * 4 * 2 * d * d)


def factored_flops(length: int, n_joints: int, cfg: ModelConfig) -> int:
    layout = LimbLayout.build(cfg.limb_groups, n_joints)
    temporal = block_flops(cfg.mamba, n_joints + 1, length)
    spatial = block_flops(cfg.mamba, length, layout.length)
    return temporal + spatial + interaction_flops(length, n_joints, cfg.d_model)


def naive_flops(length: int, n_joints: int, d: int) -> int:
    return attention_core_flops(length * n_joints, d)


class FactoredPathway:
    """One temporal scan block, one spatial scan block and one interaction block."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.layout = LimbLayout.build(cfg.limb_groups, cfg.n_joints)
        self.temporal = MambaBlock(cfg.mamba, rng)
        self.spatial = MambaBlock(cfg.mamba, rng)
        self.interaction = InteractionBlock(cfg, rng)
        self.separators = rng.standard_normal((self.layout.n_separators, cfg.d_model)) * 0.02

    def __call__(self, h: np.ndarray, o: np.ndarray) -> np.ndarray:
        """``h`` (L, J, D) joints, ``o`` (L, D) object."""
        length, j, d = h.shape
        tokens = np.concatenate([o[None], h.transpose(1, 0, 2)], axis=0)  # (J+1, L, D)
        with no_grad():
            y = self.temporal(Tensor(tokens)).data
            hj = y[1:].transpose(1, 0, 2)                                  # (L, J, D)
            seq = self.layout.apply_array(hj, self.separators)             # (L, S, D)
            hj = self.layout.invert_array(self.spatial(Tensor(seq)).data)
            visible = np.ones((1, length, j), dtype=bool)
            out, _, _, _ = self.interaction(Tensor(hj[None]), Tensor(y[0][None]), visible)
        return out.data[0]


class NaiveAttention:
    """Single-head self-attention over every joint token, evaluated in query chunks."""

    def __init__(self, d: int, rng: np.random.Generator, chunk: int = 1024):
        bound = 1.0 / math.sqrt(d)
        self.wq, self.wk, self.wv, self.wo = (rng.uniform(-bound, bound, (d, d)) for _ in range(4))
        self.scale = 1.0 / math.sqrt(d)
        self.chunk = chunk

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """``x`` (N, D) tokens."""
        q, k, v = x @ self.wq, x @ self.wk, x @ self.wv
        out = np.empty_like(q)
        for s in range(0, len(x), self.chunk):
            logits = (q[s:s + self.chunk] @ k.T) * self.scale
            logits -= logits.max(axis=1, keepdims=True)
            np.exp(logits, out=logits)
            logits /= logits.sum(axis=1, keepdims=True)
            out[s:s + self.chunk] = logits @ v
        return out @ self.wo


def _best_time(fn, reps: int) -> float:
    best = math.inf
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


@dataclass(frozen=True)
class BenchRow:
    L: int
    tokens: int
    flops_ejim: int
    flops_naive: int
    time_ejim: float
    time_naive: float


def bench_config(d_model: int = 128, n_joints: int = 24) -> ModelConfig:
    return ModelConfig(d_model=d_model, n_joints=n_joints, n_modules=1, k=0,
                       limb_groups=default_limb_groups(n_joints - 1))


def run_bench(grid=DEFAULT_GRID, n_joints: int = 24, d_model: int = 128, reps: int = 2,
              seed: int = 0, timed: bool = True) -> list[BenchRow]:
    """FLOPs and best-of-``reps`` wall time of both pathways at each length."""
    cfg = bench_config(d_model, n_joints)
    rng = np.random.default_rng(seed)
    factored = FactoredPathway(cfg, rng)
    naive = NaiveAttention(d_model, rng)
    rows = []
    for length in grid:
        h = rng.standard_normal((length, n_joints, d_model))
        o = rng.standard_normal((length, d_model))
        t_f = t_n = float("nan")
        if timed:
            factored(h[:4], o[:4])  # compile scan kernels outside the clock
            t_f = _best_time(lambda: factored(h, o), reps)
            t_n = _best_time(lambda: naive(h.reshape(-1, d_model)), reps)
        rows.append(BenchRow(length, length * n_joints, factored_flops(length, n_joints, cfg),
                             naive_flops(length, n_joints, d_model), t_f, t_n))
    return rows


def growth_exponents(rows: list[BenchRow]) -> dict[str, float]:
    """Least-squares slope of log(quantity) against log(L)."""
    lengths = np.log([r.L for r in rows])
    out = {}
    for name in ("flops_ejim", "flops_naive", "time_ejim", "time_naive"):
        values = np.array([getattr(r, name) for r in rows], dtype=float)
        if len(rows) >= 2 and np.all(values > 0):
            out[name] = float(np.polyfit(lengths, np.log(values), 1)[0])
        else:
            out[name] = float("nan")
    return out


def ratio_at(length: int, n_joints: int = 24, d_model: int = 128) -> float:
    cfg = bench_config(d_model, n_joints)
    return naive_flops(length, n_joints, d_model) / factored_flops(length, n_joints, cfg)


def attention_ratios(length: int, n_joints: int = 24, d_model: int = 128) -> dict[str, float]:
    """Attention-only comparisons, reported beside the full pathway ratio.

    ``vs_interaction``: naive attention core against the per-frame attention
    cores alone. ``vs_body_token``: joint-level attention over ``L * J``
    tokens against attention over ``L`` whole-body tokens.
    """
    naive = naive_flops(length, n_joints, d_model)
    return {
        "vs_interaction": naive / (length * attention_core_flops(n_joints + 1, d_model)),
        "vs_body_token": naive / attention_core_flops(length, d_model),
    }


def format_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in rows:
        writer.writerow([r.L, r.tokens, r.flops_ejim, r.flops_naive,
                         f"{r.time_ejim:.6f}", f"{r.time_naive:.6f}"])
    return buf.getvalue()


def format_summary(rows: list[BenchRow], ratio_length: int = 200, n_joints: int = 24,
                   d_model: int = 128) -> str:
    """Comment lines: growth exponents, then FLOP ratios at ``ratio_length``."""
    lines = [f"# growth_exponent {k} {v:.4f}" for k, v in growth_exponents(rows).items()]
    lines.append(f"# flop_ratio_naive_over_ejim L={ratio_length} "
                 f"{ratio_at(ratio_length, n_joints, d_model):.4f}")
    for k, v in attention_ratios(ratio_length, n_joints, d_model).items():
        lines.append(f"# attention_ratio_{k} L={ratio_length} {v:.4f}")
    return "\n".join(lines) + "\n"
