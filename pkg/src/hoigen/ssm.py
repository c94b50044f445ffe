"""Selective state-space layer (Mamba-style).

The scan is a plain sequential recurrence compiled with numba. Its backward
pass recomputes the hidden states instead of keeping them on the tape, so a
block costs O(batch * L * d_inner) memory between forward and backward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .autodiff import functional as F
from .autodiff.nn import LayerNorm, Linear, Module, Parameter
from .autodiff.tensor import Tensor, make_op


def discretize_zoh(delta, A, B):
    """Zero-order-hold transition and Euler input matrix.

    Returns ``(exp(delta * A), delta * B)`` with numpy broadcasting, so
    callers choose the layout (scalars, per-channel or per-state arrays).
    """
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ValueError("discretize_zoh: step size delta must be strictly positive")
    return np.exp(delta * np.asarray(A)), delta * np.asarray(B)


_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_INV_LN2 = 1.44269504088896338700e+00


@numba.njit(cache=True, fastmath=True, inline="always")
def _exp_into(x, out, bits):
    """``out = exp(x)`` for flat float64 buffers, accurate to a few ulp.

    Range reduction to [-ln2/2, ln2/2] plus a degree-11 Taylor polynomial,
    with the power of two assembled from its bit pattern. Unlike a libm call
    the loop vectorizes. Inputs below -700 flush to ~0.
    """
    scale = bits.view(np.float64)
    for i in range(x.shape[0]):
        xi = max(x[i], -700.0)
        k = np.rint(xi * _INV_LN2)
        r = (xi - k * _LN2_HI) - k * _LN2_LO
        p = 1.0 / 39916800.0
        p = p * r + 1.0 / 3628800.0
        p = p * r + 1.0 / 362880.0
        p = p * r + 1.0 / 40320.0
        p = p * r + 1.0 / 5040.0
        p = p * r + 1.0 / 720.0
        p = p * r + 1.0 / 120.0
        p = p * r + 1.0 / 24.0
        p = p * r + 1.0 / 6.0
        p = p * r + 0.5
        p = p * r + 1.0
        p = p * r + 1.0
        bits[i] = (np.int64(k) + 1023) << 52
        out[i] = p * scale[i]


@numba.njit(cache=True, fastmath=True, inline="always")
def _transition(delta, At, b, t, arg, out, bits):
    """Fill ``out[n, d] = exp(delta[b, t, d] * At[n, d])``."""
    ns, nd = arg.shape
    for n in range(ns):
        for d in range(nd):
            arg[n, d] = delta[b, t, d] * At[n, d]
    _exp_into(arg.reshape(-1), out.reshape(-1), bits)


# State buffers are laid out (d_state, d_inner) so the innermost loops run
# over channels, which vectorize and need no horizontal reductions.
@numba.njit(cache=True, fastmath=True)
def _scan_forward(u, delta, A, B, C, D):
    nb, length, nd = u.shape
    ns = A.shape[1]
    y = np.empty_like(u)
    At = np.ascontiguousarray(A.T).astype(np.float64)
    h = np.zeros((ns, nd), dtype=np.float64)
    arg = np.empty((ns, nd), dtype=np.float64)
    a = np.empty((ns, nd), dtype=np.float64)
    bits = np.empty(ns * nd, dtype=np.int64)
    du = np.empty(nd, dtype=np.float64)
    acc = np.empty(nd, dtype=np.float64)
    for b in range(nb):
        h[:, :] = 0.0
        for t in range(length):
            _transition(delta, At, b, t, arg, a, bits)
            for d in range(nd):
                du[d] = delta[b, t, d] * u[b, t, d]
                acc[d] = D[d] * u[b, t, d]
            for n in range(ns):
                bn = B[b, t, n]
                cn = C[b, t, n]
                for d in range(nd):
                    hv = a[n, d] * h[n, d] + du[d] * bn
                    h[n, d] = hv
                    acc[d] += hv * cn
            for d in range(nd):
                y[b, t, d] = acc[d]
    return y


@numba.njit(cache=True, fastmath=True)
def _scan_backward(u, delta, A, B, C, D, gy):
    nb, length, nd = u.shape
    ns = A.shape[1]
    gu = np.empty_like(u)
    gdelta = np.empty_like(u)
    At = np.ascontiguousarray(A.T).astype(np.float64)
    gAt = np.zeros((ns, nd), dtype=np.float64)
    gB = np.zeros_like(B)
    gC = np.zeros_like(C)
    gD = np.zeros(nd, dtype=np.float64)
    arg = np.empty((ns, nd), dtype=np.float64)
    a = np.empty((length, ns, nd), dtype=np.float64)
    bits = np.empty(ns * nd, dtype=np.int64)
    # hs[t + 1] is the state after step t; hs[0] = 0
    hs = np.empty((length + 1, ns, nd), dtype=np.float64)
    gh = np.empty((ns, nd), dtype=np.float64)
    du = np.empty(nd, dtype=np.float64)
    acc_u = np.empty(nd, dtype=np.float64)
    acc_dt = np.empty(nd, dtype=np.float64)
    for b in range(nb):
        hs[0] = 0.0
        gh[:, :] = 0.0
        for t in range(length):
            _transition(delta, At, b, t, arg, a[t], bits)
            for d in range(nd):
                du[d] = delta[b, t, d] * u[b, t, d]
            for n in range(ns):
                bn = B[b, t, n]
                for d in range(nd):
                    hs[t + 1, n, d] = a[t, n, d] * hs[t, n, d] + du[d] * bn
        for t in range(length - 1, -1, -1):
            for d in range(nd):
                g = gy[b, t, d]
                gD[d] += g * u[b, t, d]
                acc_u[d] = g * D[d]
                acc_dt[d] = 0.0
            for n in range(ns):
                bn = B[b, t, n]
                cn = C[b, t, n]
                gb = 0.0
                gc = 0.0
                for d in range(nd):
                    g = gy[b, t, d]
                    dt = delta[b, t, d]
                    uu = u[b, t, d]
                    at = a[t, n, d]
                    prev = hs[t, n, d]
                    gc += g * hs[t + 1, n, d]
                    ght = gh[n, d] + g * cn
                    gstate = ght * at * prev
                    acc_dt[d] += At[n, d] * gstate + ght * bn * uu
                    gAt[n, d] += dt * gstate
                    gdu = ght * dt
                    gb += gdu * uu
                    acc_u[d] += gdu * bn
                    gh[n, d] = ght * at
                gB[b, t, n] = gb
                gC[b, t, n] = gc
            for d in range(nd):
                gu[b, t, d] = acc_u[d]
                gdelta[b, t, d] = acc_dt[d]
    gA = np.ascontiguousarray(gAt.T)
    return gu, gdelta, gA.astype(A.dtype), gB, gC, gD.astype(D.dtype)


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, D: Tensor) -> Tensor:
    """Run ``h_t = exp(delta_t A) h_{t-1} + delta_t B_t u_t``, ``y_t = <C_t, h_t> + D u_t``.

    Shapes: ``u`` and ``delta`` are (batch, L, d_inner) or (L, d_inner); ``A``
    is (d_inner, d_state); ``B`` and ``C`` are (batch, L, d_state) or
    (L, d_state); ``D`` is (d_inner,). ``h_0 = 0``.
    """
    squeeze = u.ndim == 2
    if squeeze:
        u, delta, B, C = (F.reshape(x, (1,) + x.shape) for x in (u, delta, B, C))
    nb, length, nd = u.shape
    ns = A.shape[-1]
    if delta.shape != u.shape:
        raise F.ShapeError(f"selective_scan: delta {delta.shape} vs input {u.shape}")
    if A.shape != (nd, ns) or D.shape != (nd,):
        raise F.ShapeError(f"selective_scan: A {A.shape} / D {D.shape} vs d_inner {nd}")
    for name, m in (("B", B), ("C", C)):
        if m.shape != (nb, length, ns):
            raise F.ShapeError(
                f"selective_scan: {name} has shape {m.shape}, expected {(nb, length, ns)}")

    args = tuple(np.ascontiguousarray(x.data) for x in (u, delta, A, B, C, D))
    y = _scan_forward(*args)

    def backward(g):
        return _scan_backward(*args, np.ascontiguousarray(g))

    out = make_op(y, (u, delta, A, B, C, D), backward, "selective_scan")
    if squeeze:
        out = F.reshape(out, out.shape[1:])
    return out


def scan_flops(n_sequences: int, length: int, d_inner: int, d_state: int) -> int:
    """Floating-point operations of :func:`selective_scan` in the forward pass.

    Per (step, channel, state): delta*A, exp, multiply by h, delta*u*B (one
    multiply, the delta*u product is shared per channel), add, and the C
    readout multiply-add: 7 flops. Per (step, channel): delta*u, D*u and the
    final add: 3 flops.
    """
    steps = n_sequences * length
    return int(steps * d_inner * (7 * d_state + 3))


@dataclass(frozen=True)
class MambaConfig:
    d_model: int
    d_state: int = 16
    expand: int = 2
    d_conv: int = 4
    dt_rank: int | None = None
    bidirectional: bool = True

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    @property
    def rank(self) -> int:
        return self.dt_rank or max(1, math.ceil(self.d_model / 16))


class ScanBranch(Module):
    """Convolution, selective parameters and scan for one direction."""

    def __init__(self, cfg: MambaConfig, rng: np.random.Generator):
        di, ns, r = cfg.d_inner, cfg.d_state, cfg.rank
        self.conv_weight = Parameter(rng.uniform(-1, 1, size=(di, cfg.d_conv)) / math.sqrt(cfg.d_conv))
        self.conv_bias = Parameter(np.zeros(di))
        self.x_proj = Linear(di, r + 2 * ns, rng, bias=False)
        self.dt_proj = Linear(r, di, rng)
        self.dt_proj.weight.data[...] = rng.uniform(-1, 1, size=(r, di)) / math.sqrt(r)
        # softplus(bias) log-uniform in [1e-3, 1e-1]
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=di))
        self.dt_proj.bias.data[...] = dt + np.log(-np.expm1(-dt))
        self.A_log = Parameter(np.tile(np.log(np.arange(1, ns + 1, dtype=float)), (di, 1)))
        self.D = Parameter(np.ones(di))
        self.d_conv = cfg.d_conv
        self.rank = r
        self.d_state = ns

    def forward(self, x: Tensor) -> Tensor:
        """``x`` is (batch, L, d_inner) already in scan order."""
        xp = F.pad(x, ((0, 0), (self.d_conv - 1, 0), (0, 0)))
        xc = F.silu(F.depthwise_conv1d(xp, self.conv_weight, self.conv_bias))
        dbc = self.x_proj(xc)
        r, ns = self.rank, self.d_state
        delta = F.softplus(self.dt_proj(dbc[..., :r]))
        Bm = dbc[..., r:r + ns]
        Cm = dbc[..., r + ns:]
        A = -F.exp(self.A_log)
        return selective_scan(xc, delta, A, Bm, Cm, self.D)


class MambaBlock(Module):
    """Pre-norm gated selective-scan block with a residual connection."""

    def __init__(self, cfg: MambaConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.norm = LayerNorm(cfg.d_model)
        self.in_proj = Linear(cfg.d_model, 2 * cfg.d_inner, rng)
        self.branches = [ScanBranch(cfg, rng) for _ in range(2 if cfg.bidirectional else 1)]
        self.out_proj = Linear(cfg.d_inner, cfg.d_model, rng)

    def forward(self, u: Tensor) -> Tensor:
        """``u`` is (batch, L, d_model) or (L, d_model)."""
        squeeze = u.ndim == 2
        if squeeze:
            u = F.reshape(u, (1,) + u.shape)
        di = self.cfg.d_inner
        xz = self.in_proj(self.norm(u))
        x, z = xz[..., :di], xz[..., di:]
        y = self.branches[0](x)
        if len(self.branches) == 2:
            y = y + F.flip(self.branches[1](F.flip(x, axis=1)), axis=1)
        out = self.out_proj(y * F.silu(z)) + u
        if squeeze:
            out = F.reshape(out, out.shape[1:])
        return out


class MambaStack(Module):
    """Blocks applied in sequence."""

    def __init__(self, cfg: MambaConfig, depth: int, rng: np.random.Generator):
        self.blocks = [MambaBlock(cfg, rng) for _ in range(depth)]

    def forward(self, u: Tensor) -> Tensor:
        for block in self.blocks:
            u = block(u)
        return u


def block_flops(cfg: MambaConfig, n_sequences: int, length: int) -> int:
    """Forward flops of one :class:`MambaBlock`, matmuls counted at 2 per multiply-add."""
    tokens = n_sequences * length
    dm, di, ns, r, k = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.rank, cfg.d_conv
    dirs = 2 if cfg.bidirectional else 1
    per_token = 2 * dm * 2 * di + 2 * di * dm  # in/out projections
    per_token += dirs * (2 * k * di + 2 * di * (r + 2 * ns) + 2 * r * di)
    return tokens * per_token + dirs * scan_flops(n_sequences, length, di, ns)
