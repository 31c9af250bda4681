"""
Head statistics from a training log
===================================

Every training step logs each head's primary weight, cosine weight,
harmonic mean and secondary weight.  Summarise them per head and draw
the single-versus-double weight profile.
"""

import tempfile
from pathlib import Path

from catrinet import harness

cfg = harness.RunConfig(
    d_model=16, num_heads=8, batch_size=8, epochs=5, seed=2, max_len=30,
    corpus={"num_samples": 32, "abnormal_fraction": 0.2, "seed": 2},
    split=[1.0, 0.0, 0.0],
)
out = Path(tempfile.mkdtemp())
harness.train(cfg, out)
stats = harness.stats_heads(out / "head_weights.csv", out / "heads")
for s in stats:
    print(f"head {s.head + 1}: mean {s.mean:+.4f}  sd {s.sd:.4f}  ci {s.ci_halfwidth:.4f}  n {s.n}")
print("profile written to", out / "heads" / "head_profile.svg")
