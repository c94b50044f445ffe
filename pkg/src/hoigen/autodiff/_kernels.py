"""Compiled loops for primitives where numpy would need K passes and temporaries."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def conv_forward(x, w, out):
    """``out[b, t, c] = sum_j w[c, j] * x[b, t + j, c]`` for x (N, L, C)."""
    nb, length, nc = out.shape
    k = w.shape[1]
    wt = np.ascontiguousarray(w.T)
    for b in range(nb):
        for t in range(length):
            for c in range(nc):
                out[b, t, c] = 0.0
            for j in range(k):
                for c in range(nc):
                    out[b, t, c] += wt[j, c] * x[b, t + j, c]


@numba.njit(cache=True, fastmath=True)
def conv_backward(x, w, g, gx, gwt):
    """Input gradient into ``gx`` (zeroed here) and weight gradient into ``gwt`` (K, C)."""
    nb, length, nc = g.shape
    k = w.shape[1]
    wt = np.ascontiguousarray(w.T)
    gx[:] = 0.0
    gwt[:] = 0.0
    for b in range(nb):
        for t in range(length):
            for j in range(k):
                for c in range(nc):
                    gv = g[b, t, c]
                    gx[b, t + j, c] += gv * wt[j, c]
                    gwt[j, c] += gv * x[b, t + j, c]
