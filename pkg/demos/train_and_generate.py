"""
Train a small model and write reports
=====================================

A few epochs on a tiny corpus, then greedy and beam-search reports for a
couple of images, the label classifier's opinion, and corpus metrics.
Takes around a minute on one core.
"""

import tempfile
from pathlib import Path

from catrinet import harness
from catrinet.generation import beam_search, greedy_generate

cfg = harness.RunConfig(
    d_model=32, num_heads=8, batch_size=8, epochs=60, seed=1, max_len=30,
    corpus={"num_samples": 24, "abnormal_fraction": 0.3, "seed": 1},
    split=[0.75, 0.0, 0.25], beam_width=3,
)
out = Path(tempfile.mkdtemp())
result = harness.train(cfg, out)
print(f"{result.epochs_run} epochs, loss {result.epoch_losses[0]:.3f} -> {result.epoch_losses[-1]:.3f}")

model, vocab, _ = harness.load_checkpoint(result.checkpoint)
data = harness.load_splits(cfg)
normal = next(s for s in data["train"] if s.tags[0])
abnormal = next((s for s in data["train"] if not s.tags[0]), normal)
for sample in (normal, abnormal):
    greedy = greedy_generate(model, sample.image, cfg.max_len)
    beam = beam_search(model, sample.image, 3, cfg.max_len)
    print("reference:", sample.report)
    print("greedy:   ", vocab.decode(greedy.tokens), f"({greedy.score:.3f})")
    print("beam 3:   ", vocab.decode(beam.tokens), f"({beam.score:.3f})")
    print("label probabilities:", model.decoder.classify_tags(beam.tokens).round(2))

metrics = harness.evaluate(result.checkpoint, "test", 3, out / "eval")
print({k: round(v, 2) for k, v in metrics["scaled"].items()})
