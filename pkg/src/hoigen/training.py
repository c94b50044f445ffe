"""Training loop and guided sampling for the denoiser.

Everything runs in normalized representation space. Diffusion timesteps run
over ``1..T``; the condition encoder sees ``t - 1`` so its range is
``[0, T)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff.optim import AdamW
from .autodiff.tensor import Tensor, no_grad
from .conditions import EmbeddingProvider
from .diffusion import LossWeights, NoiseSchedule, ddim_sample, q_sample, training_loss
from .network import Denoiser
from .representation import (DEFAULT_SKELETON, HOISequence, NormStats, RawHOIClip, SkeletonSpec,
                             compute_stats, decode_sequence, denormalize, encode_clip, normalize)

LOG_FIELDS = ("epoch", "step", "total", "sample", "object", "smooth")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 150
    max_steps: int | None = None
    weight_decay: float = 1e-2
    cond_drop: float = 0.1
    weights: LossWeights = LossWeights()
    seed: int = 0
    lr_decay: str = "constant"     # "constant" or "cosine" (to 0 at max_steps)


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Rate for 0-indexed ``step``; cosine decay needs ``max_steps``."""
    if cfg.lr_decay == "constant":
        return cfg.lr
    if cfg.lr_decay != "cosine" or not cfg.max_steps:
        raise ValueError(f"lr_decay must be 'constant', or 'cosine' with max_steps set; got {cfg.lr_decay!r}")
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * min(step, cfg.max_steps) / cfg.max_steps))


@dataclass
class Dataset:
    """Normalized training arrays, stacked over clips."""

    human: np.ndarray    # (N, L, J+1, 12)
    obj: np.ndarray      # (N, L, 12)
    text: np.ndarray     # (N, 512)
    points: np.ndarray   # (N, P, 3)
    labels: np.ndarray   # (N,)
    stats: NormStats

    def __len__(self) -> int:
        return len(self.human)


def prepare_dataset(clips: list[RawHOIClip], provider: EmbeddingProvider,
                    stats: NormStats | None = None,
                    spec: SkeletonSpec = DEFAULT_SKELETON) -> Dataset:
    if not clips:
        raise ValueError("no clips to train on")
    lengths = {c.length for c in clips}
    points = {c.object_points.shape for c in clips}
    if len(lengths) != 1 or len(points) != 1:
        raise ValueError(f"clips must share length and point count, got {sorted(lengths)} / {sorted(points)}")
    seqs = [encode_clip(c, spec) for c in clips]
    stats = stats if stats is not None else compute_stats(seqs, spec)
    norm = [normalize(s, stats) for s in seqs]
    labels = np.array([c.label for c in clips])
    return Dataset(
        human=np.stack([s.human for s in norm]), obj=np.stack([s.obj for s in norm]),
        text=provider.embed_batch(labels), points=np.stack([c.object_points for c in clips]),
        labels=labels, stats=stats)


def condition_tokens(model: Denoiser, text, points, t, drop) -> Tensor:
    """Condition tokens for diffusion steps ``t`` (1-indexed); ``drop`` masks text and geometry."""
    return model.conditions(text, points, np.asarray(t) - 1, drop_text=drop, drop_geometry=drop)


def loss_on_batch(model: Denoiser, schedule: NoiseSchedule, data: Dataset, idx: np.ndarray,
                  t: np.ndarray, noise_h: np.ndarray, noise_o: np.ndarray, drop: np.ndarray,
                  weights: LossWeights):
    gt_h, gt_o = data.human[idx], data.obj[idx]
    xh = q_sample(schedule, gt_h, t, noise_h)
    xo = q_sample(schedule, gt_o, t, noise_o)
    cond = condition_tokens(model, data.text[idx], data.points[idx], t, drop)
    pred_h, pred_o = model(Tensor(xh), Tensor(xo), cond)
    return training_loss(pred_h, pred_o, gt_h, gt_o, weights)


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    steps: int = 0


def train(model: Denoiser, data: Dataset, schedule: NoiseSchedule, cfg: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """AdamW on the denoising loss; logs per-epoch means of every loss component.

    Each step draws timesteps uniformly from ``1..T``, fresh noise, and drops
    text and geometry together with probability ``cfg.cond_drop`` per sample.
    Stops after ``cfg.epochs`` epochs or ``cfg.max_steps`` steps, whichever
    comes first.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    result = TrainResult()
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = dict.fromkeys(("total", "sample", "object", "smooth"), 0.0)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            if cfg.max_steps is not None and result.steps >= cfg.max_steps:
                break
            idx = order[start:start + cfg.batch_size]
            b = len(idx)
            t = rng.integers(1, schedule.T + 1, size=b)
            noise_h = rng.standard_normal(data.human[idx].shape)
            noise_o = rng.standard_normal(data.obj[idx].shape)
            drop = rng.random(b) < cfg.cond_drop
            opt.lr = learning_rate(cfg, result.steps)
            opt.zero_grad()
            loss, parts = loss_on_batch(model, schedule, data, idx, t, noise_h, noise_o, drop, cfg.weights)
            loss.backward()
            opt.step()
            result.steps += 1
            batches += 1
            for k in sums:
                sums[k] += parts[k]
        if not batches:
            break
        row = {"epoch": epoch, "step": result.steps, **{k: v / batches for k, v in sums.items()}}
        result.log.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return result


def evaluation_loss(model: Denoiser, data: Dataset, schedule: NoiseSchedule,
                    weights: LossWeights = LossWeights(), per_clip: int = 4, seed: int = 0) -> float:
    """Mean conditional loss over fixed stratified timesteps and noise, without gradients."""
    rng = np.random.default_rng(seed)
    n = len(data)
    edges = np.linspace(1, schedule.T + 1, per_clip + 1)
    total = 0.0
    with no_grad():
        for i in range(per_clip):
            t = rng.integers(int(edges[i]), int(edges[i + 1]), size=n)
            idx = np.arange(n)
            _, parts = loss_on_batch(model, schedule, data, idx, t,
                                     rng.standard_normal(data.human.shape),
                                     rng.standard_normal(data.obj.shape),
                                     np.zeros(n, dtype=bool), weights)
            total += parts["total"]
    return total / per_clip


def format_log(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_FIELDS)
    for r in rows:
        writer.writerow([r["epoch"], r["step"]] + [repr(float(r[k])) for k in LOG_FIELDS[2:]])
    return buf.getvalue()


# ------------------------------------------------------------------ sampling
def make_predictor(model: Denoiser, text: np.ndarray, points: np.ndarray):
    """``predict(x, t)`` on stacked sequences (B, L, J+2, 12), conditional and unconditional in one pass."""
    b = len(text)
    text2 = np.concatenate([text, text])
    points2 = np.concatenate([points, points])
    drop = np.repeat([False, True], b)

    def predict(x: np.ndarray, t: int):
        x2 = np.concatenate([x, x])
        with no_grad():
            cond = condition_tokens(model, text2, points2, np.full(2 * b, t), drop)
            ph, po = model(Tensor(x2[:, :, 1:]), Tensor(x2[:, :, 0]), cond)
        out = np.concatenate([po.data[:, :, None], ph.data], axis=2)
        return out[:b], out[b:]

    return predict


def sample_sequences(model: Denoiser, text: np.ndarray, points: np.ndarray, length: int,
                     schedule: NoiseSchedule, stats: NormStats, guidance: float = 2.0,
                     seed: int = 0, steps: np.ndarray | None = None) -> list[HOISequence]:
    """Guided DDIM samples, denormalized, one per condition row."""
    j = model.cfg.n_joints
    shape = (len(text), length, j + 1, stats.obj_mean.shape[0])
    x = ddim_sample(make_predictor(model, text, points), shape, schedule, guidance, seed, steps)
    return [denormalize(HOISequence.from_stacked(xi), stats) for xi in x]


def sample_clips(model: Denoiser, templates: list[RawHOIClip], provider: EmbeddingProvider,
                 schedule: NoiseSchedule, stats: NormStats, guidance: float = 2.0, seed: int = 0,
                 steps: np.ndarray | None = None, batch_size: int = 8,
                 spec: SkeletonSpec = DEFAULT_SKELETON) -> list[RawHOIClip]:
    """One generated clip per template, conditioned on its label and object points.

    Annotations are copied from the template. Batch ``i`` uses seed ``seed + i``.
    """
    out = []
    for i, start in enumerate(range(0, len(templates), batch_size)):
        chunk = templates[start:start + batch_size]
        text = provider.embed_batch([c.label for c in chunk])
        points = np.stack([c.object_points for c in chunk])
        seqs = sample_sequences(model, text, points, chunk[0].length, schedule, stats,
                                guidance, seed + i, steps)
        out.extend(decode_sequence(s, spec, template=c) for s, c in zip(seqs, chunk))
    return out
