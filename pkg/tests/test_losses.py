import math

import numpy as np
import pytest

from catrinet.errors import ConfigError, ContractError
from catrinet.losses import LossWeights, caption_ce, combine, multilabel_soft_margin, nll_from_log_probs
from catrinet.tensor import Parameter, Tensor, log_softmax


def test_caption_ce_examples():
    one_hot = np.eye(4)[[1, 2, 3]]
    assert caption_ce(one_hot, [1, 2, 3]).item() == 0.0
    uniform = np.full((5, 4), 0.25)
    assert abs(caption_ce(uniform, [0, 1, 2, 3, 0]).item() - math.log(4)) < 1e-12


def test_caption_ce_padding_is_ignored():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(6), size=4)
    gold = [1, 2, 3, 4]
    base = caption_ce(p, gold).item()
    padded = np.vstack([p, np.zeros((2, 6))])
    padded[4:, 0] = 1.0
    mask = [1, 1, 1, 1, 0, 0]
    assert abs(caption_ce(padded, gold + [0, 0], mask).item() - base) < 1e-12


def test_caption_ce_rejects_bad_gold():
    with pytest.raises(ContractError):
        caption_ce(np.full((2, 3), 1 / 3), [0, 3])


def test_nll_matches_caption_ce():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(2, 3, 5))
    gold = rng.integers(0, 5, size=(2, 3))
    mask = np.array([[1, 1, 0], [1, 1, 1]])
    a = nll_from_log_probs(log_softmax(Tensor(logits)), gold, mask).item()
    probs = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    assert abs(a - caption_ce(probs, gold, mask).item()) < 1e-12


def test_soft_margin_examples():
    assert abs(multilabel_soft_margin([[0.0]], [[1]]).item() - math.log(2)) < 1e-12
    sat = multilabel_soft_margin([[20.0]], [[1]]).item()
    assert abs(sat - math.log1p(math.exp(-20))) < 1e-20 and sat > 0


def test_soft_margin_random_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.normal(size=(1, 6)) * 4
        y = rng.integers(0, 2, size=(1, 6))
        direct = -sum(
            y[0, i] * math.log(1 / (1 + math.exp(-x[0, i])))
            + (1 - y[0, i]) * math.log(math.exp(-x[0, i]) / (1 + math.exp(-x[0, i])))
            for i in range(6)
        ) / 6
        assert abs(multilabel_soft_margin(x, y).item() - direct) < 1e-12


def test_soft_margin_shape_check():
    with pytest.raises(ContractError):
        multilabel_soft_margin(np.zeros((1, 3)), np.zeros((1, 4)))


def test_combine_examples():
    assert combine(1.0, 1.0, 1.0, LossWeights(1.0, 5.0)).total.item() == 7.0
    assert combine(0.0, 0.0, 0.0).total.item() == 0.0
    assert combine(1.0, 2.0, None, LossWeights(0.5, 5.0)).total.item() == 2.0


def test_combine_gradient_readout():
    parts = [Parameter(0.3), Parameter(0.2), Parameter(0.1)]
    combine(*parts, LossWeights(0.4, 7.0)).total.backward()
    assert [p.grad.item() for p in parts] == [1.0, 0.4, 7.0]


@pytest.mark.parametrize("alpha,beta", [(0.0, 5.0), (1.5, 5.0), (1.0, 1.0), (1.0, 10.5)])
def test_weights_validated(alpha, beta):
    with pytest.raises(ConfigError):
        LossWeights(alpha, beta)
