import json
from pathlib import Path

import numpy as np
import pytest

from conftest import SYNTHETIC
from jointsan import cli
from jointsan import model as model_mod
from jointsan.answer import SpanPrediction
from jointsan.errors import ConfigError
from jointsan.evaluation import read_predictions
from jointsan.tensor import Tensor

TINY = """
# tiny run for tests
train_file = {root}/train.json
dev_file = {root}/dev.json
embedding_file = {root}/embeddings.txt
cache_dir = {tmp}/cache
checkpoint_dir = {tmp}/ckpt
predictions_out = {tmp}/pred.json
embedding_dim = 50
d = 4
steps = 2
pos_dim = 3
ner_dim = 2
batch_size = 8
epochs = 2
seed = 3
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY.format(root=SYNTHETIC, tmp=tmp_path))
    return path


def run(*args):
    return cli.main([str(a) for a in args])


def test_config_parsing_and_precedence(tmp_path):
    values = cli.parse_config_text("d = 8\nlambda_cls = 1.0  # weight\n\ntrain_file = a.json\n")
    rc = cli.build_run_config(values, {"lambda_cls": "0.5", "resume": "true"}, base_dir=tmp_path)
    assert rc.train.d == 8 and rc.train.lambda_cls == 0.5 and rc.resume is True
    assert rc.train_file == tmp_path / "a.json"
    with pytest.raises(ConfigError, match="unknown config key"):
        cli.build_run_config({"colour": "red"}, {})
    with pytest.raises(ConfigError, match="line 1"):
        cli.parse_config_text("just words")


def test_unknown_key_exit_code(config, capsys):
    assert run("prepare", "--config", config, "--no_such_key", "1") == cli.EXIT_PARSE
    assert "no_such_key" in capsys.readouterr().err


def test_prepare_stats_and_cache_hit(config, tmp_path, capsys):
    assert run("prepare", "--config", config) == 0
    out = capsys.readouterr().out
    dev = json.loads((SYNTHETIC / "dev.json").read_text())
    flags = [q["is_impossible"] for p in dev["data"][0]["paragraphs"] for q in p["qas"]]
    assert f"dev: {len(flags)} examples, unanswerable fraction {sum(flags) / len(flags):.4f}" in out
    assert "skipped alignments 0" in out
    entries = list((tmp_path / "cache").iterdir())
    assert len(entries) == 1
    mtime = (entries[0] / "train.jsonl").stat().st_mtime_ns
    assert run("prepare", "--config", config) == 0
    assert "cache hit" in capsys.readouterr().out
    assert (entries[0] / "train.jsonl").stat().st_mtime_ns == mtime


def test_prepare_missing_and_corrupt_inputs(config, tmp_path, capsys):
    assert run("prepare", "--config", config, "--train_file", tmp_path / "nope.json") == cli.EXIT_MISSING
    assert "nope.json" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text('{"data": [')
    assert run("prepare", "--config", config, "--train_file", bad) == cli.EXIT_PARSE
    cache = tmp_path / "cache"
    assert not cache.exists() or not any(cache.iterdir())
    assert run("train", "--config", tmp_path / "missing.cfg") == cli.EXIT_MISSING


def test_train_predict_evaluate(config, tmp_path, capsys):
    assert run("train", "--config", config) == 0
    out = capsys.readouterr().out
    assert "dev EM" in out and "dev F1" in out
    assert len((tmp_path / "ckpt" / "metrics.jsonl").read_text().splitlines()) == 2

    assert run("predict", "--config", config) == 0
    first = (tmp_path / "pred.json").read_bytes()
    preds = read_predictions(tmp_path / "pred.json")
    assert len(preds) == 32
    probs = json.loads((tmp_path / "pred.na_prob.json").read_text())
    assert set(probs) == set(preds) and all(0 < p < 1 for p in probs.values())
    assert run("predict", "--config", config) == 0
    assert (tmp_path / "pred.json").read_bytes() == first

    capsys.readouterr()
    assert run("evaluate", "--config", config) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["total"] == 32 and 0 <= report["exact"] <= report["f1"] <= 100

    assert run("predict", "--config", config, "--d", "6") == cli.EXIT_MISMATCH


def test_variant_runs_write_distinct_logs(config, tmp_path):
    assert run("train", "--config", config, "--variant", "joint", "--checkpoint_dir", tmp_path / "a") == 0
    assert run("train", "--config", config, "--variant", "span-only", "--checkpoint_dir", tmp_path / "b") == 0
    a = (tmp_path / "a" / "metrics.jsonl").read_text()
    b = (tmp_path / "b" / "metrics.jsonl").read_text()
    assert a != b


def test_resume_continues_identically(config, tmp_path):
    assert run("train", "--config", config, "--epochs", "3", "--checkpoint_dir", tmp_path / "full") == 0
    assert run("train", "--config", config, "--epochs", "1", "--checkpoint_dir", tmp_path / "part") == 0
    assert run("train", "--config", config, "--epochs", "3", "--checkpoint_dir", tmp_path / "part",
               "--resume", "true") == 0
    assert (tmp_path / "full" / "metrics.jsonl").read_text() == (tmp_path / "part" / "metrics.jsonl").read_text()


def test_threshold_controls_override(config, tmp_path, monkeypatch):
    assert run("train", "--config", config, "--epochs", "1") == 0
    # crafted: every question gets P_u = 0.9 and a non-null span
    monkeypatch.setattr(model_mod, "sigmoid", lambda z: Tensor(np.full(z.shape, 0.9)))
    real_decode = model_mod.decode_span

    def first_token(pb, pe, max_len):
        s = real_decode(pb, pe, max_len)
        return SpanPrediction(s.p_begin, s.p_end, 0, 0, 1.0, False)

    monkeypatch.setattr(model_mod, "decode_span", first_token)
    assert run("predict", "--config", config, "--threshold", "1.0") == 0
    loose = read_predictions(tmp_path / "pred.json")
    assert run("predict", "--config", config, "--threshold", "0.5") == 0
    strict = read_predictions(tmp_path / "pred.json")
    assert all(a != "" for a in loose.values())
    assert all(a == "" for a in strict.values())


def test_gradcheck_command(capsys):
    assert run("gradcheck") == 0
    out = capsys.readouterr().out
    assert "gradcheck passed" in out
    names = {line.split()[0] for line in out.splitlines() if line.endswith(" ok")}
    from jointsan.gradcheck import toy_config, toy_model
    from jointsan.tensor import make_rng
    params = toy_model(toy_config(), make_rng(0))
    assert {n for n, _ in params.named_parameters(trainable_only=True)} <= names


def test_gradcheck_negative_control(monkeypatch, capsys):
    from jointsan import tensor as T
    monkeypatch.setitem(T._BACKWARD_CORRUPTION, "sigmoid", 1.5)
    monkeypatch.setattr(cli, "run_gradcheck", lambda seed: _fast_gradcheck(seed))
    assert run("gradcheck") == cli.EXIT_CHECK
    out = capsys.readouterr().out
    assert "FAILED" in out and "op:sigmoid" in out


def _fast_gradcheck(seed):
    from jointsan.gradcheck import run_gradcheck
    return run_gradcheck(seed=seed, include_training=False, samples=2, directions=1)


def test_committed_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    variants = {}
    for path in sorted(root.glob("*.cfg")):
        rc = cli.build_run_config(cli.parse_config_text(path.read_text()), {}, path.parent)
        assert rc.train_file.exists() and rc.embedding_file.exists()
        variants[path.stem] = rc.train.variant
    assert variants == {"span_only": "span-only", "joint": "joint", "joint_classifier": "joint+classifier"}
