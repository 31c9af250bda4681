"""
Double head weighting, step by step
===================================

Each attention head gets a primary weight (softmax over learnable gates)
and a secondary weight computed from how similar its output was to the
base head's on the previous iteration.  Dissimilar heads are boosted.
"""

import numpy as np

from catrinet.attention import (
    BATCH_MEAN,
    AdaptiveCoAttention,
    AttentionConfig,
    cosine_head_weights,
    dwa_weights,
    harmonic_lambda,
    pool_heads,
    select_base_head,
)
from catrinet.tensor import Tensor

rng = np.random.default_rng(1)
att = AdaptiveCoAttention(rng, AttentionConfig(num_heads=4, model_dim=16, batch_avg_mode=BATCH_MEAN))
att.gates.data = np.array([0.2, 1.0, -0.3, 0.1])

queries = Tensor(rng.normal(size=(6, 5, 16)))   # 6 reports, 5 words
image = Tensor(rng.normal(size=(6, 9, 16)))     # 9 image positions each

# iteration i-1: plain forward, per-head outputs kept unmixed
out, per_head = att(queries, image)
w_a = att.primary_weights().data
base = select_base_head(w_a)
print("primary weights", np.round(w_a, 3), "-> base head", base)

pooled = pool_heads(per_head)                   # (B, N, head_dim)
per_sample, w_cos = cosine_head_weights(pooled, base, BATCH_MEAN)
lam = harmonic_lambda(w_cos)
w_dwa = dwa_weights(lam, w_cos)
print("cosine weights", np.round(w_cos, 3))
print("harmonic mean  ", round(lam, 4))
print("secondary      ", np.round(w_dwa, 4))

# the module does the same bookkeeping and applies it next iteration
state = att.update_state(per_head)
assert np.array_equal(state.w_dwa, w_dwa)
boosted, _ = att(queries, image)
print("output change from secondary weights:", float(np.abs(boosted.data - out.data).max()))

# the harmonic mean is pulled towards small and negative similarities; with
# mixed signs it can even go negative, and then no head is boosted
for w in ([0.5, 0.25], [0.9, 0.8, -0.1], [0.2, -0.2]):
    print(w, "->", harmonic_lambda(w))
