"""Train the desk-scale denoiser on eight procedural clips, then sample and score them.

The default is a short run that finishes in a few minutes and shows the
pipeline; pass a step count for a longer one, e.g. ``1400``.

Run: python demos/04_overfit_and_sample.py [steps]
"""

import sys
import time

import numpy as np

from hoigen.conditions import StubEmbedding
from hoigen.corpus import LABEL_NAMES, generate_corpus
from hoigen.diffusion import make_schedule
from hoigen.metrics import evaluate_pairs, format_report
from hoigen.network import Denoiser, ModelConfig
from hoigen.training import TrainConfig, evaluation_loss, prepare_dataset, sample_clips, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 120
clips = generate_corpus(8, 32, 0)
print("training clips:", ", ".join(LABEL_NAMES[c.label] for c in clips))
provider = StubEmbedding(0)
data = prepare_dataset(clips, provider)
schedule = make_schedule()
model = Denoiser(ModelConfig(d_model=64, n_modules=4, k=3), np.random.default_rng(0))
print(f"denoiser parameters: {model.num_parameters():,}")

before = evaluation_loss(model, data, schedule)
start = time.time()
train(model, data, schedule,
      TrainConfig(lr=2e-3, batch_size=1, epochs=10 ** 6, max_steps=steps, lr_decay="cosine"),
      on_epoch=lambda row: print(f"  step {row['step']:5d}  loss {row['total']:8.3f}")
      if row["epoch"] % 5 == 0 else None)
after = evaluation_loss(model, data, schedule)
print(f"held-out-noise loss {before:.2f} -> {after:.2f} in {time.time() - start:.0f}s")

# sampling all eight clips costs about as much as a few hundred training steps
generated = sample_clips(model, clips, provider, schedule, data.stats, guidance=2.0, seed=0,
                         steps=schedule.ddim_steps[::5] if steps < 500 else None)
gt = {f"clip{i}": c for i, c in enumerate(clips)}
print("\nground truth against itself:")
print(format_report(evaluate_pairs(gt, gt)))
print("generated:")
print(format_report(evaluate_pairs(gt, dict(zip(gt, generated)))))
