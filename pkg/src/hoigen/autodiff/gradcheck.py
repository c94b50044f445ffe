"""Finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def _scalarize(out: Tensor, weights: np.ndarray | None):
    if weights is None:
        return out
    return (out * weights).sum()


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Largest ``|analytic - numeric| / max(1, |numeric|)`` over input coordinates.

    ``f`` maps the tensors in ``inputs`` to a tensor. A non-scalar output is
    contracted with fixed random weights so every output entry is exercised.
    Numeric derivatives use central differences of step ``eps``. With
    ``max_coords`` set, each input is probed at that many randomly chosen
    coordinates instead of all of them.
    """
    rng = np.random.default_rng(seed)
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = f(*inputs)
    weights = None
    if out.size != 1:
        weights = rng.standard_normal(out.shape)
    loss = _scalarize(out, weights)
    if not loss.requires_grad:
        # constant function: the analytic gradient is zero everywhere
        analytic = [np.zeros_like(x.data) for x in inputs]
    else:
        loss.backward()
        analytic = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in inputs]

    worst = 0.0
    with no_grad():
        for x, ga in zip(inputs, analytic):
            flat = x.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            ga_flat = ga.reshape(-1)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                up = _scalarize(f(*inputs), weights).item()
                flat[i] = orig - eps
                down = _scalarize(f(*inputs), weights).item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * eps)
                err = abs(ga_flat[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    return float(worst)
