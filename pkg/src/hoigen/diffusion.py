"""Gaussian diffusion with a linear beta schedule, clean-sample prediction and DDIM.

Timesteps are 1-indexed: ``t`` runs over ``1..T`` and ``alpha_bar[0] = 1`` is
the clean data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import functional as F
from .autodiff.tensor import Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray        # (T + 1,), betas[0] = 0
    alpha_bar: np.ndarray    # (T + 1,), alpha_bar[0] = 1
    ddim_steps: np.ndarray   # descending timesteps of the sampler

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """``steps`` evenly spaced timesteps from ``T`` down to 1."""
    if not 1 <= steps <= T:
        raise ValueError(f"sampler steps must lie in [1, {T}], got {steps}")
    return np.unique(np.round(np.linspace(1, T, steps)).astype(int))[::-1].copy()


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2,
                  steps: int = 50) -> NoiseSchedule:
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    betas = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    alpha_bar = np.cumprod(1.0 - betas)
    return NoiseSchedule(betas, alpha_bar, ddim_timesteps(T, steps))


def q_sample(schedule: NoiseSchedule, x0: np.ndarray, t, noise: np.ndarray) -> np.ndarray:
    """Closed-form ``x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps``; ``t`` scalar or per batch row."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"timestep outside [1, {schedule.T}]")
    ab = schedule.alpha_bar[t].reshape(t.shape + (1,) * (x0.ndim - t.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def q_step(schedule: NoiseSchedule, x_prev: np.ndarray, t: int, noise: np.ndarray) -> np.ndarray:
    """One forward step ``x_t ~ N(sqrt(1 - beta_t) x_{t-1}, beta_t I)``."""
    b = schedule.betas[t]
    return np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * noise


# --------------------------------------------------------------------- loss
@dataclass(frozen=True)
class LossWeights:
    sample: float = 1.0
    obj: float = 1.0
    smooth: float = 0.5
    squared: bool = False


def _norm(x: Tensor, axes, squared: bool) -> Tensor:
    if squared:
        return F.sum(x * x, axis=axes)
    return F.norm(x, axis=axes)


def training_loss(pred_h: Tensor, pred_o: Tensor, gt_h, gt_o,
                  weights: LossWeights = LossWeights()) -> tuple[Tensor, dict[str, float]]:
    """Reconstruction of the whole sequence, of the object alone, and frame-to-frame smoothness.

    Inputs are batched: human (B, L, J, 12) and object (B, L, 12). Each term
    is a Euclidean norm per sample (squared if ``weights.squared``), then
    averaged over the batch. Smoothness sums the norms of consecutive-frame
    differences of the prediction.
    """
    if pred_h.shape != np.shape(gt_h) or pred_o.shape != np.shape(gt_o):
        raise F.ShapeError(
            f"training_loss: prediction {pred_h.shape}/{pred_o.shape} vs "
            f"target {np.shape(gt_h)}/{np.shape(gt_o)}")
    b, length = pred_o.shape[:2]
    pred = F.concat([F.reshape(pred_o, (b, length, 1, -1)), pred_h], axis=2)
    gt = np.concatenate([np.asarray(gt_o)[:, :, None], np.asarray(gt_h)], axis=2)
    sample = F.mean(_norm(pred - gt, (1, 2, 3), weights.squared))
    obj = F.mean(_norm(pred_o - gt_o, (1, 2), weights.squared))
    total = sample * weights.sample + obj * weights.obj
    smooth_val = 0.0
    if length > 1:
        diff = pred[:, 1:] - pred[:, :-1]
        smooth = F.mean(F.sum(_norm(diff, (2, 3), weights.squared), axis=1))
        total = total + smooth * weights.smooth
        smooth_val = smooth.item()
    parts = {"total": total.item(), "sample": sample.item(), "object": obj.item(),
             "smooth": smooth_val}
    return total, parts


# ------------------------------------------------------------------ sampler
Predictor = Callable[[np.ndarray, int], tuple[np.ndarray, np.ndarray]]


def guided(cond: np.ndarray, uncond: np.ndarray, scale: float) -> np.ndarray:
    return uncond + scale * (cond - uncond)


def ddim_sample(predict: Predictor, shape: tuple[int, ...], schedule: NoiseSchedule,
                guidance: float = 2.0, seed: int = 0, steps: np.ndarray | None = None,
                noise: np.ndarray | None = None) -> np.ndarray:
    """Deterministic DDIM in clean-sample parameterization with classifier-free guidance.

    ``predict(x_t, t)`` returns the conditional and unconditional clean-sample
    predictions. ``steps`` defaults to the schedule's sub-sequence; the step
    after the last listed timestep is 0, i.e. the clean prediction itself.
    """
    if guidance < 0:
        raise ValueError(f"guidance scale must be non-negative, got {guidance}")
    steps = schedule.ddim_steps if steps is None else np.asarray(steps)
    x = np.random.default_rng(seed).standard_normal(shape) if noise is None else np.array(noise)
    ab = schedule.alpha_bar
    for i, t in enumerate(steps):
        t = int(t)
        prev = int(steps[i + 1]) if i + 1 < len(steps) else 0
        cond, uncond = predict(x, t)
        x0 = guided(cond, uncond, guidance)
        eps = (x - np.sqrt(ab[t]) * x0) / np.sqrt(1.0 - ab[t])
        x = np.sqrt(ab[prev]) * x0 + np.sqrt(1.0 - ab[prev]) * eps
    return x
