import csv
import json
import re

import numpy as np
import pytest

from catrinet import cli, harness
from catrinet.corpus import load_jsonl, tokenize
from catrinet.errors import ConfigError
from catrinet.generation import beam_search
from catrinet.metrics import METRIC_KEYS, EvalPair, evaluate_pairs

TINY = {
    "d_model": 8, "num_heads": 2, "ffn_mult": 2, "max_len": 30, "batch_size": 4, "epochs": 2,
    "seed": 1, "corpus": {"num_samples": 12, "image_size": 16, "abnormal_fraction": 0.5},
    "split": [0.5, 0.25, 0.25], "beam_width": 2,
}


def tiny_config(**kw):
    return harness.RunConfig.from_dict({**TINY, **kw})


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return harness.train(tiny_config(), out), out


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigError):
        harness.RunConfig.from_dict({"learning_rate": 1})
    with pytest.raises(ConfigError):
        tiny_config(beta_schedule="linear")
    with pytest.raises(ConfigError):
        tiny_config(split=[0.5, 0.5, 0.5])
    with pytest.raises(ConfigError):
        tiny_config(alpha=2.0)


def test_train_writes_logs(trained):
    result, out = trained
    assert result.epochs_run == 2 and len(result.epoch_losses) == 2
    rows = list(csv.DictReader((out / "train_log.csv").open()))
    assert len(rows) == 4  # 6 training samples, batch 4, two epochs
    assert {"loss_t", "loss_1", "loss_2", "total", "lambda", "w_dwa_0", "w_dwa_1"} <= set(rows[0])
    for r in rows:
        total = float(r["loss_t"]) + float(r["loss_1"]) + 5 * float(r["loss_2"])
        assert abs(total - float(r["total"])) < 1e-9
    heads = list(csv.DictReader((out / "head_weights.csv").open()))
    assert len(heads) == 8 and heads[0].keys() >= {"iteration", "head", "w_a", "w_cos", "lambda", "w_dwa"}


def test_training_is_bit_reproducible(tmp_path):
    for name in ("a", "b"):
        harness.train(tiny_config(epochs=1), tmp_path / name)
    for f in ("checkpoint.bin", "checkpoint.json", "train_log.csv", "head_weights.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_disable_ca_drops_secondary_columns(tmp_path):
    harness.train(tiny_config(epochs=1, disable_ca=True), tmp_path)
    header = (tmp_path / "train_log.csv").read_text().splitlines()[0]
    assert "w_dwa" not in header
    assert "w_dwa" not in (tmp_path / "head_weights.csv").read_text().splitlines()[0]
    model, _, _ = harness.load_checkpoint(tmp_path / "checkpoint.json")
    assert np.all(model.coatt.w_dwa == 0)


def test_eval_schema_and_reproducibility(trained, tmp_path):
    result, _ = trained
    a = harness.evaluate(result.checkpoint, "test", 2, tmp_path / "a")
    b = harness.evaluate(result.checkpoint, "test", 2, tmp_path / "b")
    assert a == b
    assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()
    for key in ("bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "cider"):
        assert key in a and key in a["scaled"]
    assert len(a["heads"]) == 2


def test_eval_beam_one_matches_beam_search_pipeline(trained, tmp_path):
    result, _ = trained
    metrics = harness.evaluate(result.checkpoint, "val", 1, tmp_path)
    model, vocab, cfg = harness.load_checkpoint(result.checkpoint)
    samples = harness.load_splits(cfg)["val"]
    pairs = [
        EvalPair(s.id, vocab.decode_tokens(beam_search(model, s.image, 1, cfg.max_len).tokens),
                 [tokenize(s.report)])
        for s in samples
    ]
    assert evaluate_pairs(pairs).raw() == {k: metrics[k] for k in METRIC_KEYS}


def test_ablation_table(tmp_path):
    rows, params = harness.ablate(tiny_config(epochs=1), tmp_path)
    with (tmp_path / "ablation.csv").open() as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["variant", "B-1", "B-2", "B-3", "B-4", "ROUGE-L", "CIDEr"]
    assert [r[0] for r in table[1:]] == ["baseline", "+CA", "+TL", "full"]
    assert all(len(r) == 7 for r in table[1:])
    assert params["full"] == params["+TL"] > params["+CA"] == params["baseline"]
    base = json.loads((tmp_path / "baseline" / "config.json").read_text())
    full = json.loads((tmp_path / "full" / "config.json").read_text())
    diff = {k for k in base if base[k] != full[k]}
    assert diff == {"disable_ca", "disable_tl"}


def test_stats_heads_outputs(trained, tmp_path):
    _, out = trained
    stats = harness.stats_heads(out / "head_weights.csv", tmp_path)
    assert [s.head for s in stats] == [0, 1] and all(s.n == 4 for s in stats)
    svg = (tmp_path / "head_profile.svg").read_text()
    assert len(re.findall(r'class="bar-single"', svg)) == 2
    assert len(re.findall(r'class="bar-double"', svg)) == 2
    rows = list(csv.DictReader((tmp_path / "head_stats.csv").open()))
    assert float(rows[0]["ci"]) == pytest.approx(1.96 * float(rows[0]["sd"]) / 2)


def test_stats_heads_constant_log(tmp_path):
    log = tmp_path / "h.csv"
    lines = ["iteration,head,w_a,w_cos,lambda,w_dwa"]
    lines += [f"{i},{j},0.5,{0.1 * (j + 1)},0.2,0.0" for i in range(5) for j in range(3)]
    log.write_text("\n".join(lines) + "\n")
    stats = harness.stats_heads(log, tmp_path / "o")
    assert all(s.sd == 0 and s.ci_halfwidth == 0 for s in stats)
    assert (tmp_path / "o" / "head_profile.svg").read_text().count("<rect") == 6


def test_gen_data(tmp_path):
    path = harness.gen_data(tiny_config(), tmp_path)
    assert len(load_jsonl(path)) == 12


# -- CLI --------------------------------------------------------------------------

def test_cli_roundtrip(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({**TINY, "epochs": 1}))
    assert cli.main(["train", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "r")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["epochs_run"] == 1
    ckpt = json.loads((tmp_path / "r" / "checkpoint.json").read_text())
    assert ckpt["meta"]["run"]["seed"] == 2
    assert cli.main(["eval", "--checkpoint", out["checkpoint"], "--split", "test", "--beam", "1"]) == 0
    assert "cider" in json.loads(capsys.readouterr().out)
    assert cli.main(["gen-data", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "dataset.jsonl").exists()


def test_cli_errors_are_json(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a"}\n')
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({**TINY, "data": str(bad)}))
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ParseError" and "line 1" in err["problems"][0]
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert cli.main(["train", "--config", str(cfg)]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"
