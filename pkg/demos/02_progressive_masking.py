"""Watch the denoiser narrow its attention to the joints that touch the object.

An untrained network ranks joints arbitrarily, so this demo first shows the
schedule (24 visible joints, minus 3 per module) and then which joints the
object attends to most in the last module.

Run: python demos/02_progressive_masking.py
"""

import numpy as np

from hoigen.autodiff import Tensor, no_grad
from hoigen.conditions import StubEmbedding
from hoigen.corpus import SceneScript, generate_clip
from hoigen.network import Denoiser, ForwardTrace, ModelConfig
from hoigen.representation import DEFAULT_SKELETON, compute_stats, encode_clip, normalize

names = list(DEFAULT_SKELETON.names) + ["contact"]
clip = generate_clip(SceneScript("lift", "box", length=16, seed=1))
seq = encode_clip(clip)
norm = normalize(seq, compute_stats([seq]))

model = Denoiser(ModelConfig(d_model=32, n_modules=6, k=3), np.random.default_rng(0))
trace = ForwardTrace()
with no_grad():
    cond = model.conditions(StubEmbedding().embed_batch([clip.label]), clip.object_points[None], np.array([500]))
    model(Tensor(norm.human[None]), Tensor(norm.obj[None]), cond, trace)

print("visible joints per frame entering each module:")
for i, vis in enumerate(trace.visible[:-1]):
    print(f"  module {i + 1}: {int(vis[0, 0].sum())}")
print(f"  after the last update: {int(trace.visible[-1][0, 0].sum())}")

frame = 8
last = trace.scores[-1][0, frame]
visible = trace.visible[-2][0, frame]
order = np.argsort(-np.where(visible, last, -1))[:visible.sum()]
print(f"\nframe {frame}, last module: object attention over its visible joints")
final = trace.visible[-1][0, frame]
for j in order:
    note = "" if final[j] else "  (masked by the last update)"
    print(f"  {names[j]:<14s} {last[j]:.3f}{note}")
masked = [names[j] for j in np.flatnonzero(~trace.visible[-1][0, frame])]
print(f"\nmasked by the end ({len(masked)}): {', '.join(masked)}")
