"""Finite-difference oracle and small fixtures shared by the test modules."""

import numpy as np

from catrinet.corpus import CorpusSpec, build_vocab, generate
from catrinet.model import CATriNet, ModelConfig

FD_STEP = 1e-5


def numerical_grad(f, arr, h=FD_STEP, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


ZERO_GRAD = 1e-7


def rel_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||).

    When both norms are below ZERO_GRAD the gradient is structurally zero
    (e.g. a key bias under softmax shift invariance) and only round-off is
    left to compare, so the error is reported as 0.
    """
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < ZERO_GRAD:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def tiny_corpus(n=6, seed=3, **kw):
    samples = generate(CorpusSpec(num_samples=n, seed=seed, image_size=kw.pop("image_size", 16), **kw))
    return samples, build_vocab(samples)


def tiny_model(vocab, seed=0, **kw):
    cfg = dict(vocab_size=len(vocab), num_tags=6, image_size=(16, 16), patch_size=8,
               d_model=8, num_heads=2, max_len=30, ffn_mult=2)
    cfg.update(kw)
    return CATriNet(ModelConfig(**cfg), seed=seed)
