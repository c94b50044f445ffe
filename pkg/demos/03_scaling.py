"""Why joint-level interaction stays cheap: factored scans plus per-frame attention
against one attention layer over every joint token of the sequence.

Run: python demos/03_scaling.py [--timed]
"""

import sys

from hoigen.bench import attention_ratios, format_csv, format_summary, ratio_at, run_bench

timed = "--timed" in sys.argv
rows = run_bench((32, 64, 128, 256), n_joints=24, d_model=128, reps=2, timed=timed)
print(format_csv(rows) + format_summary(rows))

print("naive / factored FLOPs as the sequence grows:")
for length in (50, 100, 200, 400, 800):
    print(f"  L={length:4d}: {ratio_at(length):8.2f}x")
r = attention_ratios(200)
print("\nattention alone at L=200:")
print(f"  all joint tokens vs per-frame interaction attention: {r['vs_interaction']:.1f}x")
print(f"  all joint tokens vs one token per body per frame:    {r['vs_body_token']:.1f}x")
