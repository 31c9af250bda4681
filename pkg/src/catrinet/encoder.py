"""Small trained-from-scratch visual encoder.

patch embedding -> SA block -> GPSA block -> FFN block -> per-patch FC,
then an LSTM over the FC patches whose final hidden state is the
bag-of-words feature.
"""

import math

import numpy as np

from .errors import ConfigError, EmptyInputError
from .nn import LSTMCell, LayerNorm, Linear, Module
from .tensor import Parameter, Tensor, gelu, sigmoid, softmax


def patchify(images, patch_size):
    """(B, H, W) grayscale -> (B, P, patch_size**2), raster patch order."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    b, h, w = images.shape
    if h % patch_size or w % patch_size:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, gh, patch_size, gw, patch_size).transpose(0, 1, 3, 2, 4)
    return x.reshape(b, gh * gw, patch_size * patch_size)


def relative_offsets(grid_h, grid_w):
    """(P, P, 3) features (dx, dy, dx^2 + dy^2) between patch centres, grid-normalised."""
    ys, xs = np.divmod(np.arange(grid_h * grid_w), grid_w)
    dx = (xs[None, :] - xs[:, None]) / max(grid_w, 1)
    dy = (ys[None, :] - ys[:, None]) / max(grid_h, 1)
    return np.stack([dx, dy, dx * dx + dy * dy], axis=-1)


class PatchEmbed(Module):
    def __init__(self, rng, image_size, patch_size, d):
        h, w = image_size
        if h % patch_size or w % patch_size:
            raise ConfigError(f"image {h}x{w} not divisible by patch size {patch_size}")
        self.patch_size = patch_size
        self.grid = (h // patch_size, w // patch_size)
        self.proj = Linear(rng, patch_size * patch_size, d)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(self.grid[0] * self.grid[1], d)))

    @property
    def num_patches(self):
        return self.grid[0] * self.grid[1]

    def __call__(self, images):
        x = self.proj(Tensor(patchify(images, self.patch_size)))
        b = x.shape[0]
        return x + self.pos.reshape(1, *self.pos.shape).expand(b, *self.pos.shape)


class SelfAttention(Module):
    """Pre-norm multi-head self-attention block with residual."""

    def __init__(self, rng, d, num_heads):
        self.d = d
        self.num_heads = num_heads
        self.norm = LayerNorm(d)
        self.qkv = Linear(rng, d, 3 * d)
        self.out = Linear(rng, d, d)

    def _split(self, x):
        b, t, _ = x.shape
        n, dh = self.num_heads, self.d // self.num_heads
        qkv = self.qkv(x)
        q = qkv[..., : self.d].reshape(b, t, n, dh).transpose(0, 2, 1, 3)
        k = qkv[..., self.d: 2 * self.d].reshape(b, t, n, dh).transpose(0, 2, 3, 1)
        v = qkv[..., 2 * self.d:].reshape(b, t, n, dh).transpose(0, 2, 1, 3)
        return q, k, v

    def content_scores(self, q, k, mask=None):
        dh = self.d // self.num_heads
        s = (q @ k) * (1.0 / math.sqrt(dh))
        if mask is not None:
            s = s + np.broadcast_to(mask, s.shape)
        return s

    def attention(self, x, mask=None):
        """Attention matrix (B, N, T, T) and the values, for inspection."""
        q, k, v = self._split(x)
        return softmax(self.content_scores(q, k, mask), axis=-1), v

    def _merge(self, a, v):
        b, n, t, dh = v.shape
        return self.out((a @ v).transpose(0, 2, 1, 3).reshape(b, t, n * dh))

    def __call__(self, x, mask=None):
        a, v = self.attention(self.norm(x), mask)
        return x + self._merge(a, v)


class GatedPositionalSelfAttention(SelfAttention):
    """Each head mixes content attention with attention over patch offsets.

    A_h = (1 - g_h) softmax(QK^T / sqrt(dh)) + g_h softmax(pos_h), with
    g_h = sigmoid(gate_h) and pos_h a learned linear score of the offset
    features.
    """

    def __init__(self, rng, d, num_heads, grid):
        super().__init__(rng, d, num_heads)
        self.offsets = relative_offsets(*grid)
        self.pos_weight = Parameter(rng.normal(0.0, 1.0, size=(3, num_heads)))
        self.gate = Parameter(np.ones(num_heads))

    def attention(self, x, mask=None, gate=None):
        q, k, v = self._split(x)
        b, n, t, _ = q.shape
        content = softmax(self.content_scores(q, k, mask), axis=-1)
        pos = softmax((Tensor(self.offsets) @ self.pos_weight).transpose(2, 0, 1), axis=-1)
        pos = pos.reshape(1, n, t, t).expand(b, n, t, t)
        g = sigmoid(self.gate) if gate is None else Tensor(np.asarray(gate, dtype=np.float64))
        g = g.reshape(1, n, 1, 1).expand(b, n, t, t)
        return (1.0 - g) * content + g * pos, v

    def __call__(self, x, mask=None, gate=None):
        a, v = self.attention(self.norm(x), mask, gate)
        return x + self._merge(a, v)


class FeedForward(Module):
    def __init__(self, rng, d, mult=4):
        self.norm = LayerNorm(d)
        self.up = Linear(rng, d, mult * d)
        self.down = Linear(rng, mult * d, d)

    def __call__(self, x):
        return x + self.down(gelu(self.up(self.norm(x))))


class VisualEncoder(Module):
    def __init__(self, rng, image_size, patch_size, d, num_heads, ffn_mult=4):
        self.patch = PatchEmbed(rng, image_size, patch_size, d)
        self.sa = SelfAttention(rng, d, num_heads)
        self.gpsa = GatedPositionalSelfAttention(rng, d, num_heads, self.patch.grid)
        self.ffn = FeedForward(rng, d, ffn_mult)
        self.norm = LayerNorm(d)
        self.fc = Linear(rng, d, d)
        self.ife = LSTMCell(rng, d, d)

    def embed(self, images):
        """F_embedding: (B, P, d) FC-projected patch features."""
        x = self.patch(images)
        x = self.ffn(self.gpsa(self.sa(x)))
        return self.fc(self.norm(x))

    def bag_of_words(self, patches):
        """F_CL: final LSTM hidden state over patches in raster order."""
        if patches.shape[1] == 0:
            raise EmptyInputError("no patches to summarise")
        h, _ = self.ife.run(patches)
        return h

    def __call__(self, images):
        emb = self.embed(images)
        return emb, self.bag_of_words(emb)
