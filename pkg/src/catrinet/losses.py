"""Caption cross-entropy, multi-label soft margin, and their weighted total."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor, log, softplus


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 1.0 < self.beta <= 10.0:
            raise ConfigError(f"beta must lie in (1, 10], got {self.beta}")


@dataclass
class LossBreakdown:
    loss_t: Tensor
    loss_1: Tensor
    loss_2: Tensor  # None when the second generation stage is disabled
    total: Tensor

    def as_floats(self):
        return {
            "loss_t": self.loss_t.item(),
            "loss_1": self.loss_1.item(),
            "loss_2": float("nan") if self.loss_2 is None else self.loss_2.item(),
            "total": self.total.item(),
        }


def _gather_gold(values, gold, mask):
    gold = np.asarray(gold, dtype=np.int64)
    if gold.ndim == 1:
        gold = gold[None]
        values = values.reshape(1, *values.shape)
    b, t, v = values.shape
    if gold.shape != (b, t):
        raise ContractError(f"gold ids {gold.shape} do not match distributions {values.shape}")
    if gold.size and (gold.max() >= v or gold.min() < 0):
        raise ContractError(f"gold id out of range for vocabulary of size {v}")
    mask = np.ones((b, t)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(b, t)
    picked = values[np.arange(b)[:, None], np.arange(t)[None, :], gold]
    return picked, mask


def nll_from_log_probs(log_probs, gold, mask=None):
    """Mean of -log p(gold) over unmasked positions; ``log_probs`` is (B, T, V)."""
    picked, mask = _gather_gold(log_probs, gold, mask)
    count = mask.sum()
    if count == 0:
        raise ContractError("no unmasked positions")
    return (picked * mask).sum() * (-1.0 / count)


def caption_ce(dists, gold, mask=None):
    """Cross-entropy of probability vectors (T, V) or (B, T, V) against gold ids."""
    dists = dists if isinstance(dists, Tensor) else Tensor(dists)
    picked, mask = _gather_gold(dists, gold, mask)
    # masked positions may hold zero probability; give them a harmless value
    safe = picked * mask + (1.0 - mask)
    count = mask.sum()
    if count == 0:
        raise ContractError("no unmasked positions")
    return (log(safe) * mask).sum() * (-1.0 / count)


def multilabel_soft_margin(logits, tags):
    """-(1/C) sum_i [y_i log sig(x_i) + (1 - y_i) log sig(-x_i)], batch-averaged."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    y = np.asarray(tags, dtype=np.float64)
    if y.shape != logits.shape:
        raise ContractError(f"tag shape {y.shape} does not match logits {logits.shape}")
    per_entry = softplus(-logits) * y + softplus(logits) * (1.0 - y)
    return per_entry.mean()


def _scalar(x):
    return x if isinstance(x, Tensor) else Tensor(float(x))


def combine(loss_t, loss_1, loss_2, weights=LossWeights()):
    loss_t, loss_1 = _scalar(loss_t), _scalar(loss_1)
    loss_2 = None if loss_2 is None else _scalar(loss_2)
    total = loss_t + loss_1 * weights.alpha
    if loss_2 is not None:
        total = total + loss_2 * weights.beta
    return LossBreakdown(loss_t, loss_1, loss_2, total)
