"""Multi-head co-attention with double head weighting.

Primary weights ``w_a`` are a softmax over N learnable gates.  Secondary
weights come from how similar each head's (pooled, detached) output was to
the base head's on the previous iteration:

    cos_k^j   = cos(head_j(k), head_base(k))         per sample k
    w_cos^j   = sum_k cos_k^j / N   (or / B)
    lambda    = N / sum_j 1 / w_cos^j                harmonic mean
    w_dwa^j   = relu(lambda - w_cos^j)

Head j is then scaled by ``w_a^j * (1 + w_dwa^j)`` before the output
projection, so ``w_dwa == 0`` is exactly primary-only attention.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, EmptyInputError
from .nn import Linear, Module
from .tensor import Parameter, Tensor, cosine_sim, softmax

PAPER_LITERAL = "paper_literal"
BATCH_MEAN = "batch_mean"


@dataclass
class AttentionConfig:
    num_heads: int = 8
    model_dim: int = 512
    eps_recip: float = 1e-6
    batch_avg_mode: str = PAPER_LITERAL

    def __post_init__(self):
        if self.num_heads < 2:
            raise ConfigError("need at least two heads (a base and one other)")
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by {self.num_heads} heads")
        if self.batch_avg_mode not in (PAPER_LITERAL, BATCH_MEAN):
            raise ConfigError(f"unknown batch_avg_mode {self.batch_avg_mode!r}")

    @property
    def head_dim(self):
        return self.model_dim // self.num_heads


@dataclass
class HeadWeightState:
    iteration: int
    w_a: np.ndarray
    base_idx: int
    w_cos: np.ndarray
    lam: float
    w_dwa: np.ndarray
    per_sample_cos: np.ndarray = field(repr=False)


def select_base_head(w_a):
    """Index of the largest primary weight; ties go to the lowest index."""
    return int(np.argmax(np.asarray(w_a)))


def cosine_head_weights(pooled, base_idx, mode=PAPER_LITERAL):
    """Per-sample cosines against the base head and their batch aggregate.

    ``pooled`` has shape (B, N, head_dim).  Returns ``(per_sample_cos (B, N),
    w_cos (N,))``.
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    batch, heads = pooled.shape[:2]
    cos = np.empty((batch, heads))
    for k in range(batch):
        base = pooled[k, base_idx]
        for j in range(heads):
            cos[k, j] = cosine_sim(pooled[k, j], base)
    if mode == PAPER_LITERAL:
        w_cos = cos.sum(axis=0) / heads
    elif mode == BATCH_MEAN:
        w_cos = cos.sum(axis=0) / batch
    else:
        raise ConfigError(f"unknown batch_avg_mode {mode!r}")
    return cos, w_cos


def harmonic_lambda(w_cos, eps_recip=1e-6):
    """Harmonic mean of the cosine weights, with reciprocal guards."""
    w = np.asarray(w_cos, dtype=np.float64).reshape(-1)
    guarded = np.where(np.abs(w) < eps_recip, np.where(w < 0, -eps_recip, eps_recip), w)
    total = math.fsum(1.0 / guarded)
    if abs(total) < eps_recip:
        return 0.0
    return w.size / total


def dwa_weights(lam, w_cos):
    return np.maximum(float(lam) - np.asarray(w_cos, dtype=np.float64), 0.0)


def pool_heads(per_head, query_mask=None):
    """Mean over the query axis: (B, N, Tq, dh) -> (B, N, dh)."""
    x = per_head.data if isinstance(per_head, Tensor) else np.asarray(per_head)
    if query_mask is None:
        return x.mean(axis=2)
    m = np.asarray(query_mask, dtype=np.float64)[:, None, :, None]
    return (x * m).sum(axis=2) / np.maximum(m.sum(axis=2), 1.0)


class AdaptiveCoAttention(Module):
    """Text queries attend over image keys/values, N heads, double weighting."""

    def __init__(self, rng, config):
        self.config = config
        d = config.model_dim
        self.q = Linear(rng, d, d)
        self.k = Linear(rng, d, d)
        self.v = Linear(rng, d, d)
        self.out = Linear(rng, d, d)
        self.gates = Parameter(np.zeros(config.num_heads))
        # secondary weights from the previous iteration; a constant in the graph
        self.w_dwa = np.zeros(config.num_heads)
        self.state = None

    def primary_weights(self):
        return softmax(self.gates)

    def multi_head_forward(self, queries, keys_values):
        """Scaled dot-product attention per head, outputs left unmixed.

        Returns ``(per_head (B, N, Tq, dh), attn (B, N, Tq, Tk))``.
        """
        cfg = self.config
        d, n, dh = cfg.model_dim, cfg.num_heads, cfg.head_dim
        if queries.shape[-1] != d or keys_values.shape[-1] != d:
            raise DimensionError(f"expected model_dim {d}, got {queries.shape} / {keys_values.shape}")
        b, tq = queries.shape[0], queries.shape[1]
        tk = keys_values.shape[1]
        if tk == 0:
            raise EmptyInputError("co-attention needs at least one key/value position")
        q = self.q(queries).reshape(b, tq, n, dh).transpose(0, 2, 1, 3)
        k = self.k(keys_values).reshape(b, tk, n, dh).transpose(0, 2, 3, 1)
        v = self.v(keys_values).reshape(b, tk, n, dh).transpose(0, 2, 1, 3)
        attn = softmax((q @ k) * (1.0 / math.sqrt(dh)), axis=-1)
        return attn @ v, attn

    def weight_heads(self, per_head, w_a, w_dwa=None):
        """Scale head j by ``w_a[j] * (1 + w_dwa[j])`` and concatenate heads."""
        b, n, tq, dh = per_head.shape
        scale = w_a if w_dwa is None else w_a * (1.0 + np.asarray(w_dwa, dtype=np.float64))
        scale = scale.reshape(1, n, 1, 1).expand(b, n, tq, dh)
        return (per_head * scale).transpose(0, 2, 1, 3).reshape(b, tq, n * dh)

    def apply_double_weights(self, per_head, w_a, w_dwa=None):
        return self.out(self.weight_heads(per_head, w_a, w_dwa))

    def __call__(self, queries, keys_values, use_secondary=True):
        per_head, _ = self.multi_head_forward(queries, keys_values)
        w_dwa = self.w_dwa if use_secondary else None
        return self.apply_double_weights(per_head, self.primary_weights(), w_dwa), per_head

    def update_state(self, per_head, query_mask=None, use_secondary=True):
        """Recompute the secondary weights from this iteration's head outputs.

        The result takes effect on the next forward pass.
        """
        cfg = self.config
        w_a = self.primary_weights().data.copy()
        base = select_base_head(w_a)
        per_sample, w_cos = cosine_head_weights(pool_heads(per_head, query_mask), base, cfg.batch_avg_mode)
        lam = harmonic_lambda(w_cos, cfg.eps_recip)
        w_dwa = dwa_weights(lam, w_cos)
        iteration = 0 if self.state is None else self.state.iteration + 1
        self.state = HeadWeightState(iteration, w_a, base, w_cos, lam, w_dwa, per_sample)
        if use_secondary:
            self.w_dwa = w_dwa.copy()
        return self.state
