"""
The synthetic radiology corpus
==============================

Normal studies look alike and share one report; abnormal ones carry a
class-specific blob and a finding sentence.  Abnormal classes are rare.
"""

import tempfile
from collections import Counter
from pathlib import Path

import numpy as np

from catrinet.corpus import TAG_NAMES, CorpusSpec, build_vocab, generate, load_jsonl, split, write_jsonl, write_pgm

samples = generate(CorpusSpec(num_samples=200, abnormal_fraction=0.2, seed=5))
counts = Counter(TAG_NAMES[int(np.argmax(s.tags))] for s in samples)
print("class counts", dict(counts))

for name in ("normal", "nodule", "cardiomegaly"):
    s = next(s for s in samples if TAG_NAMES[int(np.argmax(s.tags))] == name)
    print(f"{name:>13}: {s.report}")

normal = [s.image for s in samples if s.tags[0]]
abnormal = [s.image for s in samples if not s.tags[0]]
print("normal-normal distance  ", round(float(np.linalg.norm(normal[0] - normal[1])), 3))
print("normal-abnormal distance", round(float(np.linalg.norm(normal[0] - abnormal[0])), 3))

vocab = build_vocab(samples)
print("vocabulary size", len(vocab))
train, val, test = split(samples, (0.7, 0.1, 0.2), seed=0)
print("split", len(train), len(val), len(test))

out = Path(tempfile.mkdtemp())
write_jsonl(samples, out / "dataset.jsonl")
write_pgm(abnormal[0], out / "abnormal.pgm")
print("round trip ok:", len(load_jsonl(out / "dataset.jsonl")) == len(samples), "->", out)
