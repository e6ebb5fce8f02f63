"""Command line: ``jointsan prepare|train|predict|evaluate|gradcheck --config PATH [--key value]...``

Exit codes: 0 success, 1 check failure, 2 missing input, 3 parse error,
4 checkpoint/config incompatibility.
"""

from __future__ import annotations

import argparse
import dataclasses
import functools
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data as D
from .config import TrainConfig
from .errors import CheckpointMismatchError, ConfigError, DatasetFormatError, DimensionError
from .evaluation import evaluate, read_predictions, write_predictions
from .gradcheck import run_gradcheck
from .model import predict
from .tensor import make_rng
from .training import check_compatible, load_checkpoint, params_from_state, train

_echo = functools.partial(print, flush=True)

EXIT_OK, EXIT_CHECK, EXIT_MISSING, EXIT_PARSE, EXIT_MISMATCH = 0, 1, 2, 3, 4

PATH_KEYS = ("train_file", "dev_file", "embedding_file", "tag_file", "cove_file", "cache_dir",
             "checkpoint_dir", "checkpoint", "predictions_out", "predict_file")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    train_file: Optional[Path] = None
    dev_file: Optional[Path] = None
    embedding_file: Optional[Path] = None
    tag_file: Optional[Path] = None
    cove_file: Optional[Path] = None
    cache_dir: Path = Path("cache")
    checkpoint_dir: Path = Path("checkpoints")
    checkpoint: Optional[Path] = None
    predictions_out: Path = Path("predictions.json")
    predict_file: Optional[Path] = None
    resume: bool = False


def _coerce(value: str, kind):
    if kind is bool or kind == "bool":
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if kind is int or kind == "int":
        return int(value)
    if kind is float or kind == "float":
        return float(value)
    return value


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_run_config(file_values: dict[str, str], overrides: dict[str, str],
                     base_dir: Optional[Path] = None) -> RunConfig:
    """Merge config-file values with command-line overrides (overrides win).

    Paths from the file are relative to the file's directory; paths given on
    the command line are relative to the working directory.
    """
    train_fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    known = set(train_fields) | set(PATH_KEYS) | {"resume"}
    train_kw, run_kw = {}, {}
    for source, values in (("file", file_values), ("override", overrides)):
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key in train_fields:
                train_kw[key] = _coerce(value, train_fields[key])
            elif key == "resume":
                run_kw[key] = _coerce(value, bool)
            else:
                path = Path(value)
                if source == "file" and base_dir is not None and not path.is_absolute():
                    path = Path(os.path.normpath(base_dir / path))
                run_kw[key] = path
    return RunConfig(train=TrainConfig(**train_kw), **run_kw)


def _require_file(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise CliError(f"no {what} configured", EXIT_MISSING)
    if not Path(path).exists():
        raise CliError(f"missing {what}: {path}", EXIT_MISSING)
    return Path(path)


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- prepare -----------------------------------------------------------------------
def cache_key(rc: RunConfig) -> str:
    parts = {
        "format": D.CACHE_FORMAT_VERSION,
        "train": _file_digest(rc.train_file), "dev": _file_digest(rc.dev_file) if rc.dev_file else None,
        "embeddings": _file_digest(rc.embedding_file),
        "tags": _file_digest(rc.tag_file) if rc.tag_file else None,
        "embedding_dim": rc.train.embedding_dim, "seed": rc.train.seed,
    }
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:16]


def cmd_prepare(rc: RunConfig, out=_echo) -> Path:
    """Featurize train/dev and build vocabulary and embedding table under a content-hash directory."""
    _require_file(rc.train_file, "train_file")
    if rc.dev_file is not None:
        _require_file(rc.dev_file, "dev_file")
    _require_file(rc.embedding_file, "embedding_file")
    if rc.tag_file is not None:
        _require_file(rc.tag_file, "tag_file")
    target = Path(rc.cache_dir) / cache_key(rc)
    if (target / "meta.json").exists():
        meta = json.loads((target / "meta.json").read_text())
        out(f"cache hit: {target}")
        _print_stats(meta, out)
        return target

    tagger = D.FileTagProvider(rc.tag_file) if rc.tag_file else D.DefaultTagProvider()
    splits, stats = {}, {}
    try:
        for name, path in (("train", rc.train_file), ("dev", rc.dev_file)):
            if path is None:
                continue
            counter = Counter()
            splits[name] = D.read_dataset(path, counter)
            n = counter["examples"]
            stats[name] = {"examples": n, "unanswerable": counter["unanswerable"],
                           "unanswerable_fraction": counter["unanswerable"] / n if n else 0.0,
                           "skipped_alignment": counter["skipped_alignment"]}
        vocabs = D.build_vocabularies([ex for exs in splits.values() for ex in exs], tagger)
        table = D.load_embeddings(rc.embedding_file, vocabs.words, make_rng(rc.train.seed))
    except DatasetFormatError as exc:
        raise CliError(f"parse error: {exc}", EXIT_PARSE) from exc
    if table.dim != rc.train.embedding_dim:
        raise CliError(f"embedding file has dimension {table.dim}, config says {rc.train.embedding_dim}", EXIT_PARSE)

    Path(rc.cache_dir).mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".prepare-", dir=rc.cache_dir))
    try:
        vocabs.save(tmp / "vocab.json")
        np.save(tmp / "embeddings.npy", table.matrix)
        for name, examples in splits.items():
            D.save_cache(tmp / f"{name}.jsonl", examples, [D.featurize(ex, vocabs, tagger) for ex in examples])
        meta = {"splits": stats, "vocab_size": len(vocabs.words), "embedding_matched": table.matched,
                "embedding_duplicates": table.duplicates, "embedding_dim": table.dim}
        (tmp / "meta.json").write_text(json.dumps(meta, indent=1))
        os.replace(tmp, target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    out(f"prepared cache: {target}")
    _print_stats(meta, out)
    return target


def _print_stats(meta: dict, out) -> None:
    for name, s in meta["splits"].items():
        out(f"{name}: {s['examples']} examples, unanswerable fraction {s['unanswerable_fraction']:.4f}, "
            f"skipped alignments {s['skipped_alignment']}")
    out(f"vocabulary {meta['vocab_size']} words, {meta['embedding_matched']} with pretrained vectors")


def _load_contextual(rc: RunConfig):
    if not rc.train.use_cove:
        return None
    return D.load_contextual_vectors(_require_file(rc.cove_file, "cove_file"))


# -- train -------------------------------------------------------------------------
def cmd_train(rc: RunConfig, out=_echo):
    cache = cmd_prepare(rc, out=lambda *_: None)
    vocabs = D.VocabularySet.load(cache / "vocab.json")
    matrix = np.load(cache / "embeddings.npy")
    tr_ex, tr_fe = D.load_cache(cache / "train.jsonl")
    dv_ex, dv_fe = D.load_cache(cache / "dev.jsonl") if (cache / "dev.jsonl").exists() else (None, None)
    cfg = rc.train
    out(f"variant={cfg.variant} lambda={cfg.effective_lambda} d={cfg.d} T={cfg.steps} seed={cfg.seed}")
    out(f"{'epoch':>5} {'lr':>9} {'loss':>9} {'span':>9} {'cls':>9} {'dev EM':>7} {'dev F1':>7} {'cls acc':>7}")

    def show(r):
        em, f1, acc = (r.get(k) for k in ("dev_em", "dev_f1", "dev_cls_acc"))
        fmt = lambda v: f"{v:7.2f}" if v is not None else f"{'-':>7}"
        out(f"{r['epoch']:>5} {r['lr']:>9.6f} {r['train_loss']:>9.4f} {r['train_span_loss']:>9.4f} "
            f"{r['train_cls_loss']:>9.4f} {fmt(em)} {fmt(f1)} {fmt(acc)}")

    try:
        result = train(cfg, tr_ex, tr_fe, matrix, len(vocabs.pos), len(vocabs.ner), dv_ex, dv_fe,
                       checkpoint_dir=rc.checkpoint_dir, resume=rc.resume, contextual=_load_contextual(rc),
                       on_epoch=show)
    except CheckpointMismatchError as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    out(f"best dev score {result.best_f1:.4f} at epoch {result.best_epoch}; checkpoints in {rc.checkpoint_dir}")
    return result


# -- predict -----------------------------------------------------------------------
def cmd_predict(rc: RunConfig, out=_echo) -> dict[str, str]:
    ckpt_path = _require_file(rc.checkpoint or Path(rc.checkpoint_dir) / "best.npz", "checkpoint")
    ck = load_checkpoint(ckpt_path)
    try:
        check_compatible(ck.config, rc.train)
    except CheckpointMismatchError as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    cfg = ck.config.replace(variant=rc.train.variant, threshold=rc.train.threshold,
                            max_span_len=rc.train.max_span_len)
    cache = cmd_prepare(rc, out=lambda *_: None)
    vocabs = D.VocabularySet.load(cache / "vocab.json")
    try:
        params = params_from_state(cfg, ck.state)
    except DimensionError as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    source = rc.predict_file or rc.dev_file
    _require_file(source, "predict_file")
    if rc.dev_file is not None and Path(source).resolve() == Path(rc.dev_file).resolve():
        examples, feats = D.load_cache(cache / "dev.jsonl")
    else:
        try:
            examples = D.read_dataset(source)
        except DatasetFormatError as exc:
            raise CliError(f"parse error: {exc}", EXIT_PARSE) from exc
        tagger = D.FileTagProvider(rc.tag_file) if rc.tag_file else D.DefaultTagProvider()
        feats = [D.featurize(ex, vocabs, tagger) for ex in examples]
    preds = predict(params, examples, feats, cfg, contextual=_load_contextual(rc))
    answers = {k: p.answer for k, p in preds.items()}
    write_predictions(rc.predictions_out, answers)
    write_predictions(na_prob_path(rc.predictions_out), {k: p.p_unanswerable for k, p in preds.items()})
    out(f"wrote {len(answers)} predictions to {rc.predictions_out} (variant {cfg.variant}, threshold {cfg.threshold})")
    return answers


def na_prob_path(predictions_path) -> Path:
    p = Path(predictions_path)
    return p.with_name(p.stem + ".na_prob.json")


# -- evaluate ----------------------------------------------------------------------
def cmd_evaluate(rc: RunConfig, out=_echo) -> dict:
    pred_path = _require_file(rc.predictions_out, "predictions file")
    source = _require_file(rc.predict_file or rc.dev_file, "dev_file")
    try:
        examples = D.read_dataset(source)
        preds = read_predictions(pred_path)
        na = na_prob_path(pred_path)
        probs = json.loads(na.read_text()) if na.exists() else None
    except (DatasetFormatError, ValueError) as exc:
        raise CliError(f"parse error: {exc}", EXIT_PARSE) from exc
    report = evaluate(preds, examples, probs, rc.train.threshold)
    result = report.to_dict()
    out(json.dumps(result, indent=2))
    return result


# -- gradcheck ---------------------------------------------------------------------
def cmd_gradcheck(rc: RunConfig, out=_echo) -> int:
    report = run_gradcheck(seed=rc.train.seed)
    for line in report.lines():
        out(line)
    if report.passed:
        out(f"gradcheck passed: {len(report.errors)} groups, worst {report.worst[0]} {report.worst[1]:.3e}")
        return EXIT_OK
    name, err = report.worst
    out(f"gradcheck FAILED: worst group {name} relative error {err:.3e}; failing: {', '.join(report.failures)}")
    return EXIT_CHECK


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck}


def _parse_overrides(tokens: Sequence[str]) -> dict[str, str]:
    out, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for {tok}")
            value = tokens[i + 1]
            i += 2
        out[key.replace("-", "_")] = value
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="jointsan", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values, base = {}, None
        if args.config is not None:
            if not args.config.exists():
                raise CliError(f"missing config file: {args.config}", EXIT_MISSING)
            file_values, base = parse_config_text(args.config.read_text()), args.config.parent
        rc = build_run_config(file_values, _parse_overrides(rest), base)
        result = COMMANDS[args.command](rc)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
