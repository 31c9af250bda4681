"""Training, evaluation, ablation and head-statistics drivers."""

import csv
import dataclasses
import json
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .attention import BATCH_MEAN, PAPER_LITERAL
from .corpus import CorpusSpec, build_vocab, generate, load_jsonl, split
from .errors import CompatibilityError, ConfigError, InsufficientDataError, NonFiniteError
from .generation import beam_search, greedy_generate
from .losses import LossWeights
from .metrics import DISPLAY_NAMES, METRIC_KEYS, corpus_eval, head_stats
from .model import CATriNet, ModelConfig, make_batch
from .nn import Adam
from .tensor import no_grad, softmax

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class RunConfig:
    d_model: int = 512
    num_heads: int = 8
    patch_size: int = 8
    max_len: int = 60
    ffn_mult: int = 4
    lr: float = 4e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    alpha: float = 1.0
    beta: float = 5.0
    beta_schedule: str = "constant"
    disable_ca: bool = False
    disable_tl: bool = False
    batch_avg_mode: str = PAPER_LITERAL
    eps_recip: float = 1e-6
    beam_width: int = 3
    data: str = None
    corpus: dict = field(default_factory=dict)
    split: list = field(default_factory=lambda: [0.7, 0.1, 0.2])
    min_count: int = 1
    target_loss: float = None
    eval_split: str = "test"

    def __post_init__(self):
        if self.beta_schedule != "constant":
            raise ConfigError("beta_schedule currently only supports 'constant'")
        if self.batch_avg_mode not in (PAPER_LITERAL, BATCH_MEAN):
            raise ConfigError(f"unknown batch_avg_mode {self.batch_avg_mode!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.beam_width < 1:
            raise ConfigError("batch_size and beam_width must be >= 1, epochs >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.eval_split not in SPLITS:
            raise ConfigError(f"eval_split must be one of {SPLITS}")
        self.split = list(self.split)
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be three numbers summing to 1, got {self.split}")
        self.loss_weights()
        self.corpus_spec()
        self.model_config(vocab_size=4, num_tags=2)

    def loss_weights(self):
        return LossWeights(self.alpha, self.beta)

    def corpus_spec(self):
        try:
            return CorpusSpec(**self.corpus)
        except TypeError as exc:
            raise ConfigError(f"bad corpus spec: {exc}") from None

    def model_config(self, vocab_size, num_tags, image_size=(32, 32)):
        return ModelConfig(
            vocab_size=vocab_size,
            num_tags=num_tags,
            image_size=tuple(image_size),
            patch_size=self.patch_size,
            d_model=self.d_model,
            num_heads=self.num_heads,
            max_len=self.max_len,
            ffn_mult=self.ffn_mult,
            eps_recip=self.eps_recip,
            batch_avg_mode=self.batch_avg_mode,
            disable_ca=self.disable_ca,
            disable_tl=self.disable_tl,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**raw)


def load_config(path=None, **overrides):
    raw = {} if path is None else json.loads(Path(path).read_text())
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(raw)


def worker_count():
    try:
        return max(1, int(os.environ.get("CATRINET_THREADS", "1")))
    except ValueError:
        raise ConfigError("CATRINET_THREADS must be an integer") from None


# -- data ---------------------------------------------------------------------

def load_splits(config):
    if config.data:
        samples = load_jsonl(config.data)
    else:
        samples = generate(config.corpus_spec())
    train, val, test = split(samples, config.split, config.seed)
    if not train:
        raise InsufficientDataError("training split is empty")
    return {"train": train, "val": val, "test": test}


def batches(samples, size, rng=None):
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    for start in range(0, len(samples), size):
        yield [samples[i] for i in order[start:start + size]]


# -- logs -----------------------------------------------------------------------

def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


class RunLogs:
    """Per-step loss CSV and per-iteration head-weight CSV."""

    def __init__(self, out_dir, num_heads, with_dwa):
        self.with_dwa = with_dwa
        self._loss = (Path(out_dir) / "train_log.csv").open("w", newline="")
        self._heads = (Path(out_dir) / "head_weights.csv").open("w", newline="")
        self.loss_writer = csv.writer(self._loss)
        self.head_writer = csv.writer(self._heads)
        dwa_cols = [f"w_dwa_{j}" for j in range(num_heads)] if with_dwa else []
        self.loss_writer.writerow(["step", "epoch", "loss_t", "loss_1", "loss_2", "total", "lambda"] + dwa_cols)
        self.head_writer.writerow(
            ["iteration", "head", "w_a", "w_cos", "lambda"] + (["w_dwa"] if with_dwa else [])
        )

    def step(self, step, epoch, losses, state):
        row = [step, epoch] + [_fmt(losses[k]) for k in ("loss_t", "loss_1", "loss_2", "total")]
        row.append(_fmt(state.lam))
        if self.with_dwa:
            row += [_fmt(w) for w in state.w_dwa]
        self.loss_writer.writerow(row)
        for j in range(len(state.w_a)):
            head_row = [state.iteration, j, _fmt(state.w_a[j]), _fmt(state.w_cos[j]), _fmt(state.lam)]
            if self.with_dwa:
                head_row.append(_fmt(state.w_dwa[j]))
            self.head_writer.writerow(head_row)

    def close(self):
        self._loss.close()
        self._heads.close()


# -- train ----------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Path
    epochs_run: int
    epoch_losses: list
    best_loss: float
    reached_target: bool
    parameters: int


def _first_nonfinite(model):
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.data)):
            return name
    return None


def active_parameters(model):
    """Parameter count excluding branches a disabled ablation never uses."""
    skip = ("decoder.green2.", "decoder.fc2.") if model.config.disable_tl else ()
    return sum(p.size for n, p in model.named_parameters() if not n.startswith(skip))


def mean_loss(model, vocab, samples, config):
    if not samples:
        return None
    totals = []
    weights = config.loss_weights()
    with no_grad():
        for chunk in batches(samples, config.batch_size):
            lb, _ = model.loss(make_batch(chunk, vocab, config.max_len), weights)
            totals.append(lb.total.item() * len(chunk))
    return float(np.sum(totals) / len(samples))


def train(config, out_dir):
    """Teacher-forced ADAM training; writes logs and the best checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True))
    data = load_splits(config)
    vocab = build_vocab(data["train"], config.min_count)
    image_size = data["train"][0].image.shape
    num_tags = len(data["train"][0].tags)
    model = CATriNet(config.model_config(len(vocab), num_tags, image_size), seed=config.seed)
    opt = Adam(model.parameters(), config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    weights = config.loss_weights()
    rng = np.random.default_rng(config.seed)
    logs = RunLogs(out, config.num_heads, with_dwa=not config.disable_ca)
    best, best_arrays, epoch_losses = None, None, []
    reached = False
    step = 0
    try:
        for epoch in range(config.epochs):
            totals = []
            for chunk in batches(data["train"], config.batch_size, rng):
                batch = make_batch(chunk, vocab, config.max_len)
                opt.zero_grad()
                try:
                    lb, outputs = model.loss(batch, weights)
                    lb.total.backward()
                except NonFiniteError as exc:
                    raise NonFiniteError(f"step {step}: {exc}") from None
                opt.step()
                bad = _first_nonfinite(model)
                if bad:
                    raise NonFiniteError(f"step {step}: parameter {bad} became non-finite")
                state = model.coatt.update_state(outputs["per_head"], batch.mask, model.use_secondary)
                losses = lb.as_floats()
                logs.step(step, epoch, losses, state)
                totals.append(losses["total"] * len(chunk))
                step += 1
            epoch_loss = float(np.sum(totals) / len(data["train"]))
            epoch_losses.append(epoch_loss)
            val_loss = mean_loss(model, vocab, data["val"], config)
            score = epoch_loss if val_loss is None else val_loss
            log.info("epoch %d train %.5f val %s", epoch, epoch_loss, val_loss)
            if best is None or score < best:
                best = score
                best_arrays = [(n, a.copy()) for n, a in model.state_arrays()]
            if config.target_loss is not None and epoch_loss < config.target_loss:
                reached = True
                break
    finally:
        logs.close()
    if best_arrays is None:
        best_arrays = [(n, a.copy()) for n, a in model.state_arrays()]
    _load_arrays(model, dict(best_arrays))
    ckpt = model.save(
        out / "checkpoint",
        vocab,
        {"run": config.to_dict(), "epochs_run": len(epoch_losses), "best_loss": best},
    )
    return TrainResult(ckpt, len(epoch_losses), epoch_losses, best, reached, active_parameters(model))


def _load_arrays(model, arrays):
    for name, p in model.named_parameters():
        p.data = arrays[name]
    model.coatt.w_dwa = arrays["buffers.coatt.w_dwa"]


# -- eval -----------------------------------------------------------------------

def load_checkpoint(path):
    model, vocab, meta = CATriNet.load(path)
    return model, vocab, RunConfig.from_dict(meta["run"])


def generate_reports(model, vocab, samples, beam_width, max_len):
    def one(sample):
        if beam_width == 1:
            hyp = greedy_generate(model, sample.image, max_len)
        else:
            hyp = beam_search(model, sample.image, beam_width, max_len)
        with no_grad():
            probs = model.decoder.classify_tags(hyp.tokens).tolist() if hyp.tokens else None
        return {
            "id": sample.id,
            "tokens": vocab.decode_tokens(hyp.tokens),
            "text": vocab.decode(hyp.tokens),
            "logprob": hyp.logprob,
            "label_probs": probs,
        }

    workers = worker_count()
    if workers == 1:
        rows = [one(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, samples))
    return sorted(rows, key=lambda r: r["id"])


def tag_accuracy(model, vocab, samples, max_len):
    """Exact-match accuracy of thresholded label logits on the gold reports."""
    if not samples:
        return None
    hits = 0
    with no_grad():
        for chunk in batches(samples, 32):
            b = make_batch(chunk, vocab, max_len)
            logits = model.decoder.tag_logits(b.report, b.report_mask).data
            hits += int(np.sum(np.all((logits > 0) == (b.tags > 0.5), axis=1)))
    return hits / len(samples)


def dominant_tag_accuracy(model, vocab, samples, max_len):
    if not samples:
        return None
    hits = 0
    with no_grad():
        for chunk in batches(samples, 32):
            b = make_batch(chunk, vocab, max_len)
            probs = softmax(model.decoder.tag_logits(b.report, b.report_mask)).data
            hits += int(np.sum(np.argmax(probs, axis=1) == np.argmax(b.tags, axis=1)))
    return hits / len(samples)


def _write_jsonl(rows, path):
    with Path(path).open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def evaluate(checkpoint_path, split_name=None, beam_width=None, out_dir=None):
    """Generate for one split, score it, and return the metrics JSON dict."""
    model, vocab, config = load_checkpoint(checkpoint_path)
    split_name = split_name or config.eval_split
    if split_name not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}")
    beam_width = beam_width or config.beam_width
    data = load_splits(config)
    if build_vocab(data["train"], config.min_count) != vocab:
        raise CompatibilityError("vocabulary rebuilt from the run's data does not match the checkpoint")
    if len(data["train"][0].tags) != model.config.num_tags:
        raise CompatibilityError("tag dimension of the data does not match the checkpoint")
    samples = data[split_name]
    if not samples:
        raise InsufficientDataError(f"split {split_name!r} is empty")
    out = Path(out_dir or Path(checkpoint_path).parent / f"eval_{split_name}")
    out.mkdir(parents=True, exist_ok=True)
    rows = generate_reports(model, vocab, samples, beam_width, config.max_len)
    _write_jsonl(rows, out / "generated.jsonl")
    by_id = {s.id: s for s in samples}
    _write_jsonl([{"id": r["id"], "refs": [by_id[r["id"]].report]} for r in rows], out / "references.jsonl")
    report = corpus_eval(out / "generated.jsonl", out / "references.jsonl")
    head_log = Path(checkpoint_path).parent / "head_weights.csv"
    if head_log.exists():
        try:
            report.heads = stats_from_log(head_log)
        except InsufficientDataError:
            pass
    result = report.to_json()
    result["split"] = split_name
    result["beam_width"] = beam_width
    result["tag_exact_match"] = tag_accuracy(model, vocab, samples, config.max_len)
    result["tag_dominant_match"] = dominant_tag_accuracy(model, vocab, samples, config.max_len)
    (out / "metrics.json").write_text(json.dumps(result, indent=1, sort_keys=True))
    return result


# -- ablation ------------------------------------------------------------------

VARIANTS = (
    ("baseline", True, True),
    ("+CA", False, True),
    ("+TL", True, False),
    ("full", False, False),
)


def ablate(config, out_dir, variants=VARIANTS):
    """Train each variant under the shared seed and score its eval split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, params = [], {}
    for name, no_ca, no_tl in variants:
        cfg = config.replace(disable_ca=no_ca, disable_tl=no_tl)
        sub = out / name.replace("+", "plus_")
        result = train(cfg, sub)
        metrics = evaluate(result.checkpoint, cfg.eval_split, cfg.beam_width, sub / "eval")
        params[name] = result.parameters
        log.info("variant %s: %d parameters", name, result.parameters)
        rows.append([name] + [metrics["scaled"][k] for k in METRIC_KEYS])
    with (out / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", *DISPLAY_NAMES])
        for row in rows:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
    (out / "ablation_params.json").write_text(json.dumps(params, indent=1, sort_keys=True))
    return rows, params


def directional_check(config, out_dir, seeds=(1, 2, 3)):
    """Does the full model's CIDEr match or beat the no-CA baseline per seed?

    Returns a summary dict; warns instead of raising when fewer than two
    seeds agree.
    """
    pick = (VARIANTS[0], VARIANTS[3])
    outcome = {}
    for seed in seeds:
        rows, _ = ablate(config.replace(seed=seed), Path(out_dir) / f"seed{seed}", pick)
        cider = {r[0]: r[-1] for r in rows}
        outcome[seed] = {"baseline": cider["baseline"], "full": cider["full"],
                         "full_wins": cider["full"] >= cider["baseline"],
                         "tie": cider["full"] == cider["baseline"]}
    wins = sum(v["full_wins"] for v in outcome.values())
    ties = sum(v["tie"] for v in outcome.values())
    summary = {"per_seed": outcome, "wins": wins, "ties": ties, "passed": wins >= 2}
    if not summary["passed"]:
        warnings.warn(f"full model beat the baseline CIDEr in only {wins} of {len(seeds)} seeds")
    return summary


# -- head statistics -----------------------------------------------------------

def read_head_log(path, column="w_cos"):
    per_head = {}
    final = {}
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise ConfigError(f"column {column!r} not in head log {reader.fieldnames}")
        for row in reader:
            head = int(row["head"])
            per_head.setdefault(head, []).append(float(row[column]))
            final[head] = (float(row["w_a"]), float(row.get("w_dwa") or 0.0))
    if not per_head:
        raise InsufficientDataError(f"{path}: head log is empty")
    return per_head, final


def stats_from_log(path, column="w_cos", level=0.95, sample_sd=False):
    per_head, _ = read_head_log(path, column)
    return head_stats(per_head, level, sample_sd)


def profile_svg(final, width=40, gap=12, height=200):
    """Bar pairs per head: final w_a and w_a * (1 + w_dwa)."""
    heads = sorted(final)
    single = [final[h][0] for h in heads]
    double = [final[h][0] * (1.0 + final[h][1]) for h in heads]
    top = max(single + double + [1e-12])
    total_w = len(heads) * (2 * width + gap) + gap
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{height + 30}">',
    ]
    for i, h in enumerate(heads):
        x = gap + i * (2 * width + gap)
        for k, (cls, val, colour) in enumerate(
            (("bar-single", single[i], "#8fa8c8"), ("bar-double", double[i], "#c8553d"))
        ):
            bh = height * val / top
            parts.append(
                f'<rect class="{cls}" data-head="{h}" x="{x + k * width}" y="{height - bh:.3f}" '
                f'width="{width}" height="{bh:.3f}" fill="{colour}"/>'
            )
        parts.append(f'<text x="{x + width}" y="{height + 20}" text-anchor="middle">{h + 1}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def stats_heads(log_path, out_dir, column="w_cos", level=0.95, sample_sd=False):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_head, final = read_head_log(log_path, column)
    stats = head_stats(per_head, level, sample_sd)
    with (out / "head_stats.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["head", "mean", "sd", "ci", "n"])
        for s in stats:
            w.writerow([s.head, repr(s.mean), repr(s.sd), repr(s.ci_halfwidth), s.n])
    (out / "head_profile.svg").write_text(profile_svg(final))
    return stats


# -- data generation -------------------------------------------------------------

def gen_data(config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = corpus_mod.write_jsonl(generate(config.corpus_spec()), out / "dataset.jsonl")
    return path
