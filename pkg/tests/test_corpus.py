import json
import warnings

import numpy as np
import pytest

from catrinet.corpus import (
    BOS,
    SPECIALS,
    UNK,
    CorpusSpec,
    Sample,
    build_vocab,
    class_keywords,
    generate,
    load_jsonl,
    read_pgm,
    split,
    tokenize,
    write_jsonl,
    write_pgm,
)
from catrinet.errors import ConfigError, EmptyInputError, ParseError, ValidationError


def test_same_seed_same_bytes(tmp_path):
    a = write_jsonl(generate(CorpusSpec(num_samples=20, seed=7)), tmp_path / "a.jsonl")
    b = write_jsonl(generate(CorpusSpec(num_samples=20, seed=7)), tmp_path / "b.jsonl")
    c = write_jsonl(generate(CorpusSpec(num_samples=20, seed=8)), tmp_path / "c.jsonl")
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_all_normal_when_no_abnormal_fraction():
    normal = np.eye(6, dtype=int)[0]
    for s in generate(CorpusSpec(num_samples=50, abnormal_fraction=0.0)):
        np.testing.assert_array_equal(s.tags, normal)


def test_abnormal_reports_name_their_class():
    for s in generate(CorpusSpec(num_samples=60, abnormal_fraction=1.0, templates_per_class=2)):
        cls = int(np.argmax(s.tags))
        assert cls > 0 and class_keywords()[cls - 1] in tokenize(s.report)


def test_normal_images_are_closer_to_each_other():
    samples = generate(CorpusSpec(num_samples=300, abnormal_fraction=0.5, seed=3))
    normal = [s.image for s in samples if s.tags[0]]
    abnormal = [s.image for s in samples if not s.tags[0]]
    rng = np.random.default_rng(0)
    nn, na = [], []
    for _ in range(100):
        i, j = rng.choice(len(normal), size=2, replace=False)
        k = rng.integers(len(abnormal))
        nn.append(np.linalg.norm(normal[i] - normal[j]))
        na.append(np.linalg.norm(normal[i] - abnormal[k]))
    assert np.mean(nn) < min(na)


def test_corpus_spec_validation():
    with pytest.raises(ConfigError):
        CorpusSpec(abnormal_fraction=1.5)
    with pytest.raises(ConfigError):
        CorpusSpec(templates_per_class=3)


def test_tokenize():
    assert tokenize("The heart, is NORMAL.") == ["the", "heart", "is", "normal"]


def _sample(i, report, tags=(1, 0)):
    return Sample(f"x{i}", np.zeros((2, 2)), report, np.array(tags))


def test_vocab_from_identical_reports():
    v = build_vocab([_sample(0, "b a c a"), _sample(1, "b a c a")])
    assert v.tokens == list(SPECIALS) + ["a", "b", "c"]


def test_rare_tokens_map_to_unknown():
    v = build_vocab([_sample(0, "a a b"), _sample(1, "a c")], min_count=2)
    assert v.encode("a b c") == [v.index["a"], UNK, UNK]
    with pytest.raises(EmptyInputError):
        build_vocab([])


def test_vocab_roundtrip():
    samples = generate(CorpusSpec(num_samples=30, abnormal_fraction=0.5, templates_per_class=2))
    v = build_vocab(samples)
    for s in samples:
        assert v.decode(v.encode(s.report)) == " ".join(tokenize(s.report))
    assert v.decode([BOS, v.index["heart"], 2, v.index["lungs"]]) == "heart"


def test_empty_file_warns(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    with pytest.warns(UserWarning, match="empty"):
        assert load_jsonl(p) == []


def test_missing_report_names_line(tmp_path):
    p = tmp_path / "d.jsonl"
    good = {"id": "a", "report": "ok", "tags": [1, 0], "image": {"h": 1, "w": 1, "px": [0.5]}}
    bad = {"id": "b", "tags": [1, 0], "image": {"h": 1, "w": 1, "px": [0.5]}}
    p.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(ParseError, match="line 2") as err:
        load_jsonl(p)
    assert "report" in err.value.problems[0]


def test_validation_errors(tmp_path):
    row = {"id": "a", "report": "ok", "tags": [1, 0], "image": {"h": 1, "w": 1, "px": [0.5]}}
    p = tmp_path / "d.jsonl"
    p.write_text(json.dumps(row) + "\n" + json.dumps(dict(row, tags=[1, 0, 0], id="b")) + "\n")
    with pytest.raises(ValidationError):
        load_jsonl(p)
    p.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_jsonl(p)
    p.write_text(json.dumps(dict(row, image={"h": 1, "w": 1, "px": [1.5]})) + "\n")
    with pytest.raises(ParseError):
        load_jsonl(p)


def test_write_read_roundtrip(tmp_path):
    samples = generate(CorpusSpec(num_samples=8, abnormal_fraction=0.5, image_size=16))
    back = load_jsonl(write_jsonl(samples, tmp_path / "d.jsonl"))
    for a, b in zip(samples, back):
        assert a.id == b.id and a.report == b.report
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.tags, b.tags)


def test_pgm_rows(tmp_path):
    img = np.round(np.random.default_rng(0).random((4, 6)) * 255) / 255
    write_pgm(img, tmp_path / "a.pgm")
    np.testing.assert_allclose(read_pgm(tmp_path / "a.pgm"), img, atol=1e-12)
    (tmp_path / "b.pgm").write_text("P2\n# comment\n2 1\n4\n0 4\n")
    np.testing.assert_array_equal(read_pgm(tmp_path / "b.pgm"), [[0.0, 1.0]])
    row = {"id": "p", "report": "ok", "tags": [0, 1], "image_path": "a.pgm"}
    (tmp_path / "d.jsonl").write_text(json.dumps(row) + "\n")
    (s,) = load_jsonl(tmp_path / "d.jsonl")
    assert s.image.shape == (4, 6)


def test_split_sizes_and_partition():
    samples = [_sample(i, "a") for i in range(10)]
    tr, va, te = split(samples, (0.7, 0.1, 0.2), seed=4)
    assert (len(tr), len(va), len(te)) == (7, 1, 2)
    assert [s.id for s in tr] == [s.id for s in split(samples, (0.7, 0.1, 0.2), seed=4)[0]]
    ids = [s.id for s in tr + va + te]
    assert sorted(ids) == sorted(s.id for s in samples) and len(set(ids)) == 10
    with pytest.raises(ConfigError):
        split(samples, (0.5, 0.5, 0.5))


def test_no_warning_for_nonempty(tmp_path):
    path = write_jsonl(generate(CorpusSpec(num_samples=2)), tmp_path / "d.jsonl")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert len(load_jsonl(path)) == 2
