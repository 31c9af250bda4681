"""
Gated positional self-attention
===============================

A GPSA head blends content attention with attention over patch offsets.
The gate decides how much: 0 is ordinary self-attention, 1 ignores the
content entirely.
"""

import numpy as np

from catrinet.corpus import CorpusSpec, generate
from catrinet.encoder import GatedPositionalSelfAttention, VisualEncoder, patchify
from catrinet.tensor import Tensor

rng = np.random.default_rng(0)
gpsa = GatedPositionalSelfAttention(rng, d=16, num_heads=2, grid=(3, 3))

a = Tensor(rng.normal(size=(1, 9, 16)))
b = Tensor(rng.normal(size=(1, 9, 16)))
for gate in (0.0, 0.5, 1.0):
    attn_a, _ = gpsa.attention(a, gate=[gate, gate])
    attn_b, _ = gpsa.attention(b, gate=[gate, gate])
    print(f"gate {gate}: attention differs between inputs by {np.abs(attn_a.data - attn_b.data).max():.3f}")

# the full encoder on one synthetic chest image
sample = generate(CorpusSpec(num_samples=1, abnormal_fraction=1.0, seed=2))[0]
enc = VisualEncoder(rng, sample.image.shape, patch_size=8, d=16, num_heads=2)
print("patches", patchify(sample.image, 8).shape)
patches, summary = enc(sample.image[None])
print("patch features", patches.shape, "bag-of-words feature", summary.shape)
