"""CA-TriNet: adaptive co-attention encoder and Triple-LSTM report decoder."""

from .attention import (
    AdaptiveCoAttention,
    AttentionConfig,
    HeadWeightState,
    cosine_head_weights,
    dwa_weights,
    harmonic_lambda,
    select_base_head,
)
from .corpus import CorpusSpec, Sample, Vocabulary, build_vocab, generate, load_jsonl, split
from .generation import beam_search, greedy_generate
from .losses import LossWeights, caption_ce, combine, multilabel_soft_margin
from .metrics import EvalPair, bleu, cider, corpus_eval, head_stats, rouge_l
from .model import CATriNet, ModelConfig, make_batch
from .tensor import Tensor, cosine_sim, no_grad

__version__ = "0.1.0"

__all__ = [
    "AdaptiveCoAttention", "AttentionConfig", "HeadWeightState", "cosine_head_weights",
    "dwa_weights", "harmonic_lambda", "select_base_head",
    "CorpusSpec", "Sample", "Vocabulary", "build_vocab", "generate", "load_jsonl", "split",
    "beam_search", "greedy_generate",
    "LossWeights", "caption_ce", "combine", "multilabel_soft_margin",
    "EvalPair", "bleu", "cider", "corpus_eval", "head_stats", "rouge_l",
    "CATriNet", "ModelConfig", "make_batch",
    "Tensor", "cosine_sim", "no_grad",
]
