"""Text transformer, the three report LSTMs and the label LSTM.

Per decoding step t, with x_t the current input token and E the shared
word embedding:

    h1_t = LSTM_blue([T1_t ; att_t])
    h2_t = LSTM_green1([T1_t ; h1_t ; E x_t], h2_{t-1})   -> softmax(W_fc1 h2_t)
    h3_t = LSTM_green2([T2_t ; h2_t ; E x_t], h3_{t-1})   -> softmax(W_fc2 h3_t)

T2_t embeds the stage-one token: the gold next token under teacher forcing,
the stage-one argmax at inference.  The label LSTM reads a whole report and
its last hidden state is mapped to C tag logits.
"""

import numpy as np

from .corpus import UNK
from .encoder import FeedForward, SelfAttention
from .errors import EmptyInputError
from .nn import LayerNorm, Linear, LSTMCell, Module, cat
from .tensor import Parameter, softmax

_MASKED = -1e9


def causal_mask(t):
    return np.triu(np.full((t, t), _MASKED), k=1)


def sanitize_ids(ids, vocab_size):
    ids = np.asarray(ids, dtype=np.int64)
    return np.where((ids >= 0) & (ids < vocab_size), ids, UNK)


class TextTransformer(Module):
    """One causal self-attention block plus FFN over the embedded prefix."""

    def __init__(self, rng, d, num_heads, max_positions, ffn_mult=4):
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(max_positions, d)))
        self.attn = SelfAttention(rng, d, num_heads)
        self.ffn = FeedForward(rng, d, ffn_mult)
        self.norm = LayerNorm(d)

    def __call__(self, word_vectors):
        b, t, d = word_vectors.shape
        pos = self.pos[:t].reshape(1, t, d).expand(b, t, d)
        x = self.attn(word_vectors + pos, causal_mask(t))
        return self.norm(self.ffn(x))


class TripleLSTMDecoder(Module):
    def __init__(self, rng, vocab_size, num_tags, d, num_heads, max_len, ffn_mult=4):
        self.vocab_size = vocab_size
        self.embed = Parameter(rng.normal(0.0, 0.1, size=(vocab_size, d)))
        self.text = TextTransformer(rng, d, num_heads, max_len + 1, ffn_mult)
        self.blue = LSTMCell(rng, 2 * d, d)
        self.green1 = LSTMCell(rng, 3 * d, d)
        self.fc1 = Linear(rng, d, vocab_size)
        self.green2 = LSTMCell(rng, 3 * d, d)
        self.fc2 = Linear(rng, d, vocab_size)
        self.purple = LSTMCell(rng, d, d)
        self.tag_head = Linear(rng, d, num_tags)

    def words(self, ids):
        return self.embed[sanitize_ids(ids, self.vocab_size)]

    def text_features(self, prefix_ids):
        """T1 rows for a (B, T) batch of prefixes (or one flat prefix)."""
        ids = np.asarray(prefix_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.shape[1] == 0:
            raise EmptyInputError("text transformer needs at least the BOS token")
        return self.text(self.words(ids))

    def encode_context(self, t1, attended, state):
        return self.blue(cat(t1, attended), state)

    def decode_stage1(self, t1, h1, x_emb, state):
        h2, c2 = self.green1(cat(t1, h1, x_emb), state)
        return (h2, c2), self.fc1(h2)

    def decode_stage2(self, t2, h2, x_emb, state):
        h3, c3 = self.green2(cat(t2, h2, x_emb), state)
        return (h3, c3), self.fc2(h3)

    def tag_logits(self, report_ids, mask=None):
        """(B, R) token ids -> (B, C) logits from the last unmasked LSTM state."""
        ids = np.asarray(report_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.shape[1] == 0:
            raise EmptyInputError("cannot classify an empty report")
        h, _ = self.purple.run(self.words(ids), mask)
        return self.tag_head(h)

    def classify_tags(self, report_ids):
        """Label distribution (softmax over tag logits) for one report."""
        if len(report_ids) == 0:
            raise EmptyInputError("cannot classify an empty report")
        return softmax(self.tag_logits(np.asarray(report_ids)[None]), axis=-1).data[0]
