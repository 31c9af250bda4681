"""Caption metrics (BLEU-1..4, ROUGE-L, CIDEr) and per-head statistics.

All corpus reductions use ``math.fsum`` so scores do not depend on the
order of the pairs.
"""

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .corpus import tokenize
from .errors import AlignmentError, ContractError, InsufficientDataError, ParseError

BLEU_EPS = 1e-9


@dataclass
class EvalPair:
    id: str
    hypothesis: list
    references: list

    def __post_init__(self):
        if not self.references:
            raise ContractError(f"pair {self.id}: at least one reference required")

    @classmethod
    def from_text(cls, id, hypothesis, references):
        return cls(id, tokenize(hypothesis), [tokenize(r) for r in references])


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU -----------------------------------------------------------------

def modified_precision(hypothesis, references, n):
    """(clipped matches, hypothesis n-gram count) for one pair."""
    hyp = ngrams(hypothesis, n)
    max_ref = Counter()
    for ref in references:
        for g, c in ngrams(ref, n).items():
            max_ref[g] = max(max_ref[g], c)
    clipped = sum(min(c, max_ref[g]) for g, c in hyp.items())
    return clipped, sum(hyp.values())


def closest_ref_length(hyp_len, references):
    return min((abs(len(r) - hyp_len), len(r)) for r in references)[1]


def bleu(pairs, max_n=4):
    """Corpus BLEU with brevity penalty; zero match counts become 1e-9."""
    pairs = list(pairs)
    if not pairs:
        raise ContractError("BLEU needs at least one hypothesis")
    if max_n < 1:
        raise ContractError("max_n must be >= 1")
    c = sum(len(p.hypothesis) for p in pairs)
    r = sum(closest_ref_length(len(p.hypothesis), p.references) for p in pairs)
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        matched = total = 0
        for p in pairs:
            m, t = modified_precision(p.hypothesis, p.references, n)
            matched += m
            total += t
        p_n = matched / total if matched > 0 else BLEU_EPS / max(total, 1)
        log_p += math.log(p_n)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p / max_n)


# -- ROUGE-L --------------------------------------------------------------

def lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(hypothesis, references, beta=1.2):
    best = 0.0
    for ref in references:
        lcs = lcs_length(hypothesis, ref)
        if lcs == 0:
            continue
        rec = lcs / len(ref)
        prec = lcs / len(hypothesis)
        f = (1 + beta**2) * rec * prec / (rec + beta**2 * prec)
        best = max(best, f)
    return best


def rouge_l(pairs, beta=1.2):
    pairs = list(pairs)
    if not pairs:
        raise ContractError("ROUGE-L needs at least one pair")
    return math.fsum(rouge_l_pair(p.hypothesis, p.references, beta) for p in pairs) / len(pairs)


# -- CIDEr ----------------------------------------------------------------

def _tfidf(tokens, n, df, log_docs):
    vecs = [dict() for _ in range(n)]
    norms = [0.0] * n
    for k in range(1, n + 1):
        for g, tf in ngrams(tokens, k).items():
            w = tf * (log_docs - math.log(max(1.0, df[g])))
            vecs[k - 1][g] = w
            norms[k - 1] += w * w
    return vecs, [math.sqrt(x) for x in norms]


def cider(pairs, n=4, sigma=6.0):
    """Mean over pairs of the TF-IDF n-gram cosine (averaged over orders
    1..n and over references), gaussian length penalty, scaled by 10.

    Document frequencies come from the references of the whole corpus.
    """
    pairs = list(pairs)
    if not pairs:
        raise ContractError("CIDEr needs at least one pair")
    df = defaultdict(float)
    for p in pairs:
        seen = set()
        for ref in p.references:
            for k in range(1, n + 1):
                seen.update(ngrams(ref, k))
        for g in seen:
            df[g] += 1.0
    log_docs = math.log(float(len(pairs)))
    per_pair = []
    for p in pairs:
        vh, nh = _tfidf(p.hypothesis, n, df, log_docs)
        ref_scores = []
        for ref in p.references:
            vr, nr = _tfidf(ref, n, df, log_docs)
            delta = len(p.hypothesis) - len(ref)
            penalty = math.exp(-(delta**2) / (2 * sigma**2))
            orders = []
            for k in range(n):
                dot = sum(w * vr[k].get(g, 0.0) for g, w in vh[k].items())
                if nh[k] != 0 and nr[k] != 0:
                    dot /= nh[k] * nr[k]
                orders.append(dot * penalty)
            ref_scores.append(math.fsum(orders) / n)
        per_pair.append(10.0 * math.fsum(ref_scores) / len(ref_scores))
    return math.fsum(per_pair) / len(per_pair)


# -- head statistics --------------------------------------------------------

@dataclass
class HeadStats:
    head: int
    mean: float
    sd: float
    ci_halfwidth: float
    n: int


def z_value(level=0.95):
    # the two-decimal convention for 95% intervals
    if math.isclose(level, 0.95):
        return 1.96
    return NormalDist().inv_cdf(0.5 + level / 2.0)


def ci_halfwidth(sd, n, level=0.95):
    if n < 2:
        raise InsufficientDataError(f"need at least 2 samples for an interval, got {n}")
    return z_value(level) * sd / math.sqrt(n)


def head_stats(samples, level=0.95, sample_sd=False):
    """Per-head mean, SD and CI half-width.

    ``samples`` is either an (n, N) array (rows are observations) or a
    mapping head -> sequence of observations.
    """
    if isinstance(samples, dict):
        columns = {int(h): np.asarray(v, dtype=np.float64) for h, v in samples.items()}
    else:
        arr = np.asarray(samples, dtype=np.float64)
        if arr.ndim != 2:
            raise ContractError("expected an (observations, heads) array")
        columns = {j: arr[:, j] for j in range(arr.shape[1])}
    out = []
    for head, col in sorted(columns.items()):
        n = col.size
        if n < 2:
            raise InsufficientDataError(f"head {head}: need at least 2 observations, got {n}")
        mean = math.fsum(col) / n
        sd = float(np.std(col, ddof=1 if sample_sd else 0))
        if np.all(col == col[0]):
            sd = 0.0
        out.append(HeadStats(head, mean, sd, ci_halfwidth(sd, n, level), n))
    return out


# -- corpus evaluation ------------------------------------------------------

METRIC_KEYS = ("bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "cider")
DISPLAY_NAMES = ("B-1", "B-2", "B-3", "B-4", "ROUGE-L", "CIDEr")


@dataclass
class MetricsReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rougeL: float
    cider: float
    heads: list = field(default_factory=list)

    def raw(self):
        return {k: getattr(self, k) for k in METRIC_KEYS}

    def scaled(self):
        return {k: 100.0 * v for k, v in self.raw().items()}

    def to_json(self):
        out = dict(self.raw())
        out["scaled"] = self.scaled()
        if self.heads:
            out["heads"] = [vars(h) for h in self.heads]
        return out


def evaluate_pairs(pairs):
    pairs = sorted(pairs, key=lambda p: p.id)
    return MetricsReport(
        *(bleu(pairs, k) for k in range(1, 5)), rouge_l(pairs), cider(pairs)
    )


def _read_rows(path, required):
    rows = {}
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            missing = [k for k in required if k not in row]
            if missing:
                raise ParseError(f"{path}: line {lineno}: missing {missing}")
            rows[str(row["id"])] = row
    return rows


def corpus_eval(generated_path, references_path):
    """Score a generation JSONL ({id, text}) against references ({id, refs})."""
    gen = _read_rows(generated_path, ("id", "text"))
    refs = _read_rows(references_path, ("id", "refs"))
    mismatched = set(gen) ^ set(refs)
    if mismatched or not gen:
        raise AlignmentError(
            f"ids differ between hypotheses and references: {sorted(mismatched)}", mismatched
        )
    pairs = [EvalPair.from_text(i, gen[i]["text"], refs[i]["refs"]) for i in gen]
    return evaluate_pairs(pairs)
