"""Synthetic radiology-style corpus, dataset JSONL I/O, vocabulary and splits.

Normal studies share one smooth chest-like background and one formulaic
report.  Abnormal studies add a class-specific blob (disc, bar or ring at a
class-specific position) and swap one sentence of the report for a finding
sentence that names the class keyword.
"""

import json
import string
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyInputError, ParseError, ValidationError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

TAG_NAMES = ("normal", "nodule", "consolidation", "cardiomegaly", "atelectasis", "fracture")

_HEART = ("the heart size is normal.", "heart size is within normal limits.")
_LUNGS = ("the lungs are clear.", "both lungs are clear.")
_PLEURA = (
    "there is no pleural effusion or pneumothorax.",
    "no pleural effusion or pneumothorax is seen.",
)

# (sentence slot replaced, finding sentences); slot None appends a sentence
_FINDINGS = {
    1: ("lungs", ("there is a nodule in the right upper lobe.",
                  "a small nodule is seen in the right upper lobe.")),
    2: ("lungs", ("there is consolidation in the left lower lobe.",
                  "left lower lobe consolidation is present.")),
    3: ("heart", ("the heart is enlarged consistent with cardiomegaly.",
                  "cardiomegaly is present.")),
    4: ("lungs", ("there is atelectasis in the left upper lobe.",
                  "left upper lobe atelectasis is seen.")),
    5: (None, ("there is a fracture of the right rib.",
               "a right rib fracture is noted.")),
}


def tokenize(text):
    """Lowercase, split on whitespace, strip punctuation from token ends."""
    out = []
    for tok in text.lower().split():
        tok = tok.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


@dataclass
class Sample:
    id: str
    image: np.ndarray
    report: str
    tags: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.tags = np.asarray(self.tags, dtype=np.int64)
        if not self.report.strip():
            raise ValidationError(f"sample {self.id}: empty report")

    def to_json(self):
        h, w = self.image.shape
        return {
            "id": self.id,
            "image": {"h": h, "w": w, "px": self.image.reshape(-1).tolist()},
            "report": self.report,
            "tags": [int(t) for t in self.tags],
        }


@dataclass
class CorpusSpec:
    num_samples: int = 704
    abnormal_fraction: float = 0.2
    num_tags: int = 6
    image_size: int = 32
    templates_per_class: int = 1
    noise: float = 0.02
    seed: int = 0
    jitter: int = 1

    def __post_init__(self):
        if not 0.0 <= self.abnormal_fraction <= 1.0:
            raise ConfigError("abnormal_fraction must lie in [0, 1]")
        if not 2 <= self.num_tags <= len(TAG_NAMES):
            raise ConfigError(f"num_tags must lie in [2, {len(TAG_NAMES)}]")
        if not 1 <= self.templates_per_class <= 2:
            raise ConfigError("templates_per_class must be 1 or 2")
        if self.num_samples < 0 or self.image_size < 8:
            raise ConfigError("num_samples must be >= 0 and image_size >= 8")


def _background(size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = 0.35 + 0.25 * yy
    lungs = np.zeros_like(base)
    for cx in (0.3, 0.7):
        r = ((yy - 0.5) / 0.3) ** 2 + ((xx - cx) / 0.15) ** 2
        lungs += np.exp(-(r**2))
    return base - 0.2 * lungs


def _lesion(cls, size, dy, dx):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    yy = (yy - dy) / size
    xx = (xx - dx) / size
    if cls == 1:  # disc, upper left
        return 0.45 * (((yy - 0.3) ** 2 + (xx - 0.3) ** 2) < 0.1**2)
    if cls == 2:  # horizontal bar, lower right
        return 0.40 * ((np.abs(yy - 0.68) < 0.06) & (xx > 0.58) & (xx < 0.86))
    if cls == 3:  # large central disc
        return 0.35 * (((yy - 0.62) ** 2 + (xx - 0.5) ** 2) < 0.18**2)
    if cls == 4:  # ring, upper right
        r = np.sqrt((yy - 0.35) ** 2 + (xx - 0.7) ** 2)
        return 0.45 * (np.abs(r - 0.12) < 0.04)
    if cls == 5:  # vertical bar, left edge
        return 0.50 * ((np.abs(xx - 0.1) < 0.04) & (yy > 0.2) & (yy < 0.8))
    raise ValueError(cls)


def _report(cls, variant):
    slots = {"heart": _HEART[variant], "lungs": _LUNGS[variant], "pleura": _PLEURA[variant]}
    extra = ""
    if cls:
        slot, sentences = _FINDINGS[cls]
        if slot is None:
            extra = " " + sentences[variant]
        else:
            slots[slot] = sentences[variant]
    return f"{slots['heart']} {slots['lungs']} {slots['pleura']}{extra}"


def generate(spec):
    """Build ``spec.num_samples`` samples, fully determined by ``spec.seed``."""
    size = spec.image_size
    background = _background(size)
    findings = spec.num_tags - 1
    samples = []
    for idx in range(spec.num_samples):
        rng = np.random.default_rng([spec.seed, idx])
        abnormal = rng.random() < spec.abnormal_fraction
        cls = int(rng.integers(1, findings + 1)) if abnormal else 0
        variant = int(rng.integers(spec.templates_per_class))
        dy, dx = rng.integers(-spec.jitter, spec.jitter + 1, size=2)
        img = background + rng.normal(0.0, spec.noise, size=(size, size))
        if cls:
            img = img + _lesion(cls, size, dy, dx)
        img = np.round(np.clip(img, 0.0, 1.0), 4)
        tags = np.zeros(spec.num_tags, dtype=np.int64)
        tags[cls] = 1
        samples.append(Sample(f"s{idx:05d}", img, _report(cls, variant), tags))
    return samples


def class_keywords(num_tags=len(TAG_NAMES)):
    return TAG_NAMES[1:num_tags]


# -- vocabulary ---------------------------------------------------------

@dataclass
class Vocabulary:
    tokens: list = field(default_factory=lambda: list(SPECIALS))

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValidationError("vocabulary must start with the four special tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValidationError("duplicate vocabulary entries")

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, text):
        return [self.index.get(t, UNK) for t in tokenize(text)]

    def decode_tokens(self, ids):
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.tokens[i] if 0 <= i < len(self.tokens) else SPECIALS[UNK])
        return out

    def decode(self, ids):
        return " ".join(self.decode_tokens(ids))


def build_vocab(samples, min_count=1):
    if not samples:
        raise EmptyInputError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for s in samples:
        counts.update(tokenize(s.report))
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(list(SPECIALS) + [t for t in kept if t not in SPECIALS])


# -- files ----------------------------------------------------------------

def write_jsonl(samples, path):
    path = Path(path)
    with path.open("w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json()) + "\n")
    return path


def read_pgm(path):
    """Read a binary (P5) or ASCII (P2) PGM; values scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        dtype = ">u2" if maxval > 255 else "u1"
        data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos + 1)
    elif magic == b"P2":
        data = np.array(raw[pos:].split()[: w * h], dtype=np.float64)
        if data.size != w * h:
            raise ParseError(f"{path}: expected {w * h} pixels")
    else:
        raise ParseError(f"{path}: unsupported PGM magic {magic!r}")
    return data.astype(np.float64).reshape(h, w) / maxval


def write_pgm(image, path, maxval=255):
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    px = np.round(np.clip(image, 0.0, 1.0) * maxval).astype("u1")
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + px.tobytes())


def _parse_row(row, base_dir):
    for key in ("id", "report", "tags"):
        if key not in row:
            raise KeyError(key)
    if "image_path" in row:
        img = read_pgm(base_dir / row["image_path"])
    else:
        spec = row["image"]
        h, w, px = int(spec["h"]), int(spec["w"]), spec["px"]
        if len(px) != h * w:
            raise ValueError(f"image has {len(px)} pixels, expected {h}x{w}")
        img = np.asarray(px, dtype=np.float64).reshape(h, w)
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("pixel values outside [0, 1]")
    tags = row["tags"]
    if any(t not in (0, 1) for t in tags):
        raise ValueError("tags must be 0/1")
    if not str(row["report"]).strip():
        raise ValueError("empty report")
    return Sample(str(row["id"]), img, str(row["report"]), np.asarray(tags, dtype=np.int64))


def load_jsonl(path, num_tags=None):
    """Parse a dataset file; all row problems are collected before raising."""
    path = Path(path)
    problems, bad_len, samples = [], [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                sample = _parse_row(json.loads(line), path.parent)
            except KeyError as exc:
                problems.append(f"line {lineno}: missing field {exc.args[0]!r}")
                continue
            except (ValueError, TypeError, OSError, ParseError) as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            if num_tags is None:
                num_tags = len(sample.tags)
            if len(sample.tags) != num_tags:
                bad_len.append(f"line {lineno}: {len(sample.tags)} tags, expected {num_tags}")
                continue
            samples.append((lineno, sample))
    if problems:
        raise ParseError(f"{path}: {len(problems)} malformed row(s); " + "; ".join(problems), problems)
    if bad_len:
        raise ValidationError(f"{path}: wrong tag length; " + "; ".join(bad_len), bad_len)
    seen = {}
    for lineno, s in samples:
        if s.id in seen:
            raise ValidationError(f"{path}: duplicate id {s.id!r} on lines {seen[s.id]} and {lineno}")
        seen[s.id] = lineno
    if not samples:
        warnings.warn(f"{path}: dataset is empty")
    return [s for _, s in samples]


def split(samples, ratios=(0.7, 0.1, 0.2), seed=0):
    """Seeded shuffle then contiguous train/val/test cut."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = min(int(round(ratios[1] * n)), n - n_train)
    shuffled = [samples[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]
