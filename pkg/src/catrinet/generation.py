"""Greedy and beam-search report generation."""

from dataclasses import dataclass

import numpy as np

from .corpus import BOS, EOS
from .errors import ContractError
from .tensor import no_grad


@dataclass
class Hypothesis:
    tokens: list       # generated ids, no BOS/EOS
    logprob: float     # summed log-probability of every emitted step
    steps: int         # decode steps taken (EOS included when emitted)
    finished: bool

    @property
    def score(self):
        return self.logprob / max(self.steps, 1)


def greedy_generate(model, image, max_len=60):
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    with no_grad():
        ctx, states = model.decode_start(image)
        prefix = [BOS]
        logprob = 0.0
        for _ in range(max_len):
            states, _, logp = model.decode_step(ctx, np.asarray([prefix]), states)
            # same arithmetic as beam_search so width 1 matches bit for bit
            cand = logprob + logp[0]
            tok = int(np.argmax(cand))
            logprob = float(cand[tok])
            if tok == EOS:
                return Hypothesis(prefix[1:], logprob, len(prefix), True)
            prefix.append(tok)
        return Hypothesis(prefix[1:], logprob, max_len, False)


def beam_search(model, image, beam_width=3, max_len=60, trace=None):
    """Length-normalised beam search over the final-stage distribution.

    Each step keeps the ``beam_width`` best one-token extensions of the live
    beams; extensions ending in EOS retire to the finished pool, so the live
    beam shrinks.  Width 1 is therefore exactly greedy decoding.

    Pruning can drop the greedy path, so for wider beams the greedy
    hypothesis joins the final pool; the result never scores below it.
    ``trace``, if a list, receives the live prefixes after every step.
    """
    if beam_width < 1:
        raise ContractError("beam_width must be >= 1")
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    finished = []
    with no_grad():
        ctx, states = model.decode_start(image)
        prefixes = np.asarray([[BOS]])
        scores = np.zeros(1)
        for step in range(max_len):
            states, _, logp = model.decode_step(ctx, prefixes, states)
            cand = scores[:, None] + logp
            order = np.argsort(-cand.reshape(-1), kind="stable")[:beam_width]
            keep_rows, keep_tokens, keep_scores = [], [], []
            for flat in order:
                row, tok = divmod(int(flat), logp.shape[1])
                total = float(cand[row, tok])
                if tok == EOS:
                    finished.append(Hypothesis(prefixes[row, 1:].tolist(), total, step + 1, True))
                else:
                    keep_rows.append(row)
                    keep_tokens.append(tok)
                    keep_scores.append(total)
            if not keep_rows:
                break
            rows = np.asarray(keep_rows)
            prefixes = np.concatenate([prefixes[rows], np.asarray(keep_tokens)[:, None]], axis=1)
            scores = np.asarray(keep_scores)
            states = tuple(s[rows] for s in states)
            if trace is not None:
                trace.append(prefixes.copy())
        else:
            for row in range(prefixes.shape[0]):
                finished.append(Hypothesis(prefixes[row, 1:].tolist(), float(scores[row]), max_len, False))
    if beam_width > 1:
        finished.append(greedy_generate(model, image, max_len))
    best = finished[0]
    for hyp in finished[1:]:
        if hyp.score > best.score:
            best = hyp
    return best
