"""The assembled network: encoder, adaptive co-attention and decoder."""

from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint
from .attention import PAPER_LITERAL, AdaptiveCoAttention, AttentionConfig
from .corpus import BOS, EOS, PAD, Vocabulary
from .decoder import TripleLSTMDecoder
from .encoder import VisualEncoder
from .errors import CompatibilityError, ConfigError
from .losses import LossWeights, combine, multilabel_soft_margin, nll_from_log_probs
from .nn import Module
from .tensor import Tensor, concat, log_softmax, stack


@dataclass
class ModelConfig:
    vocab_size: int
    num_tags: int
    image_size: tuple = (32, 32)
    patch_size: int = 8
    d_model: int = 512
    num_heads: int = 8
    max_len: int = 60
    ffn_mult: int = 4
    eps_recip: float = 1e-6
    batch_avg_mode: str = PAPER_LITERAL
    disable_ca: bool = False
    disable_tl: bool = False

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        AttentionConfig(self.num_heads, self.d_model, self.eps_recip, self.batch_avg_mode)


@dataclass
class Batch:
    ids: list
    images: np.ndarray       # (B, H, W)
    inputs: np.ndarray       # (B, L) BOS + report
    targets: np.ndarray      # (B, L) report + EOS
    mask: np.ndarray         # (B, L)
    report: np.ndarray       # (B, R) report tokens for the label LSTM
    report_mask: np.ndarray  # (B, R)
    tags: np.ndarray         # (B, C)


def make_batch(samples, vocab, max_len):
    encoded = [vocab.encode(s.report)[:max_len] for s in samples]
    b = len(samples)
    length = max(len(e) for e in encoded) + 1
    inputs = np.full((b, length), PAD, dtype=np.int64)
    targets = np.full((b, length), PAD, dtype=np.int64)
    mask = np.zeros((b, length))
    r_len = max(1, max(len(e) for e in encoded))
    report = np.full((b, r_len), PAD, dtype=np.int64)
    report_mask = np.zeros((b, r_len))
    for i, e in enumerate(encoded):
        inputs[i, : len(e) + 1] = [BOS] + e
        targets[i, : len(e) + 1] = e + [EOS]
        mask[i, : len(e) + 1] = 1.0
        report[i, : len(e)] = e
        report_mask[i, : len(e)] = 1.0
        if not e:
            report[i, 0] = EOS
            report_mask[i, 0] = 1.0
    return Batch(
        ids=[s.id for s in samples],
        images=np.stack([s.image for s in samples]),
        inputs=inputs,
        targets=targets,
        mask=mask,
        report=report,
        report_mask=report_mask,
        tags=np.stack([s.tags for s in samples]).astype(np.float64),
    )


class CATriNet(Module):
    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.encoder = VisualEncoder(
            rng, config.image_size, config.patch_size, d, config.num_heads, config.ffn_mult
        )
        self.coatt = AdaptiveCoAttention(
            rng, AttentionConfig(config.num_heads, d, config.eps_recip, config.batch_avg_mode)
        )
        self.decoder = TripleLSTMDecoder(
            rng, config.vocab_size, config.num_tags, d, config.num_heads, config.max_len, config.ffn_mult
        )

    @property
    def use_secondary(self):
        return not self.config.disable_ca

    def context(self, images):
        """Co-attention keys/values: F_CL prepended to the patch features."""
        emb, bow = self.encoder(images)
        b, _, d = emb.shape
        return concat([bow.reshape(b, 1, d), emb], axis=1)

    def teacher_forward(self, batch):
        dec = self.decoder
        ctx = self.context(batch.images)
        t1 = dec.text_features(batch.inputs)
        attended, per_head = self.coatt(t1, ctx, self.use_secondary)
        x_emb = dec.words(batch.inputs)
        b, steps = batch.inputs.shape
        s1 = dec.blue.zero_state(b)
        s2 = dec.green1.zero_state(b)
        s3 = dec.green2.zero_state(b)
        t2_all = None if self.config.disable_tl else dec.words(batch.targets)
        h2s, h3s = [], []
        for t in range(steps):
            t1_t, x_t = t1[:, t, :], x_emb[:, t, :]
            s1 = dec.encode_context(t1_t, attended[:, t, :], s1)
            s2 = dec.green1(_cat3(t1_t, s1[0], x_t), s2)
            h2s.append(s2[0])
            if t2_all is not None:
                s3 = dec.green2(_cat3(t2_all[:, t, :], s2[0], x_t), s3)
                h3s.append(s3[0])
        out = {
            "per_head": per_head,
            "logp1": log_softmax(_stack_time(h2s) @ dec.fc1.weight + dec.fc1.bias),
            "logp2": None,
            "tag_logits": dec.tag_logits(batch.report, batch.report_mask),
        }
        if h3s:
            out["logp2"] = log_softmax(_stack_time(h3s) @ dec.fc2.weight + dec.fc2.bias)
        return out

    def loss(self, batch, weights=LossWeights(), outputs=None):
        out = self.teacher_forward(batch) if outputs is None else outputs
        loss_1 = nll_from_log_probs(out["logp1"], batch.targets, batch.mask)
        loss_2 = None
        if out["logp2"] is not None:
            loss_2 = nll_from_log_probs(out["logp2"], batch.targets, batch.mask)
        loss_t = multilabel_soft_margin(out["tag_logits"], batch.tags)
        return combine(loss_t, loss_1, loss_2, weights), out

    # -- inference -------------------------------------------------------
    def decode_start(self, image):
        ctx = self.context(np.asarray(image)[None])
        d = self.config.d_model
        zeros = np.zeros((1, d))
        return ctx, tuple(Tensor(zeros.copy()) for _ in range(6))

    def decode_step(self, ctx, prefixes, states):
        """Advance k hypotheses one token.

        ``prefixes`` is (k, t) ids ending with the current input token;
        ``states`` the six (k, d) LSTM tensors.  Returns
        ``(states, logp1 (k, V), logp_out (k, V))`` where ``logp_out`` is the
        distribution emitted by the final active stage.
        """
        dec = self.decoder
        prefixes = np.asarray(prefixes, dtype=np.int64)
        k = prefixes.shape[0]
        if ctx.shape[0] != k:
            ctx = Tensor(np.repeat(ctx.data[:1], k, axis=0))
        h1, c1, h2, c2, h3, c3 = states
        t1 = dec.text_features(prefixes)[:, -1, :]
        attended, _ = self.coatt(t1.reshape(k, 1, t1.shape[-1]), ctx, self.use_secondary)
        x_emb = dec.words(prefixes[:, -1])
        h1, c1 = dec.encode_context(t1, attended[:, 0, :], (h1, c1))
        (h2, c2), logits1 = dec.decode_stage1(t1, h1, x_emb, (h2, c2))
        logp1 = log_softmax(logits1).data
        if self.config.disable_tl:
            return (h1, c1, h2, c2, h3, c3), logp1, logp1
        t2 = dec.words(np.argmax(logp1, axis=-1))
        (h3, c3), logits2 = dec.decode_stage2(t2, h2, x_emb, (h3, c3))
        return (h1, c1, h2, c2, h3, c3), logp1, log_softmax(logits2).data

    # -- persistence -----------------------------------------------------
    def state_arrays(self):
        arrays = [(name, p.data) for name, p in self.named_parameters()]
        arrays.append(("buffers.coatt.w_dwa", self.coatt.w_dwa))
        return arrays

    def save(self, path, vocab, extra=None):
        meta = {"model": asdict(self.config), "vocab": list(vocab.tokens)}
        meta.update(extra or {})
        return checkpoint.save(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path):
        arrays, meta = checkpoint.load(path)
        cfg = ModelConfig(**meta["model"])
        vocab = Vocabulary(meta["vocab"])
        if len(vocab) != cfg.vocab_size:
            raise CompatibilityError(
                f"checkpoint vocabulary has {len(vocab)} tokens but model expects {cfg.vocab_size}"
            )
        model = cls(cfg)
        for name, p in model.named_parameters():
            if name not in arrays or arrays[name].shape != p.shape:
                raise CompatibilityError(f"parameter {name} missing or mis-shaped in checkpoint")
            p.data = arrays[name].copy()
        model.coatt.w_dwa = arrays["buffers.coatt.w_dwa"].copy()
        return model, vocab, meta


def _cat3(a, b, c):
    return concat([a, b, c], axis=-1)


def _stack_time(hs):
    return stack(hs, axis=1)
