import json
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
SYNTHETIC = ROOT / "data" / "synthetic"
SYNTHETIC_LARGE = ROOT / "data" / "synthetic_large"

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: list[str] = []


def squad_json(paragraphs) -> str:
    """``paragraphs``: list of (context, [qa dict, ...])."""
    return json.dumps({"version": "v2.0", "data": [
        {"title": "t", "paragraphs": [{"context": c, "qas": qas} for c, qas in paragraphs]}]})


def qa(qid, question, answers=(), impossible=False):
    return {"id": qid, "question": question, "is_impossible": impossible,
            "answers": [{"text": t, "answer_start": s} for t, s in answers]}


@pytest.fixture
def tiny_dataset_text():
    context = "Super Bowl 50 was won by the Denver Broncos. The Broncos beat the Panthers."
    return squad_json([(context, [
        qa("a1", "Who won Super Bowl 50?", [("Denver Broncos", context.index("Denver"))]),
        qa("a2", "Which Bowl?", [("Super Bowl 50", 0), ("Bowl 50", 6)]),
        qa("u1", "Who lost Super Bowl 51?", impossible=True),
    ])])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def load_corpus(root=SYNTHETIC, seed=0):
    """Featurized train/dev splits plus embedding matrix and vocabularies for a synthetic corpus."""
    from jointsan import data as D
    from jointsan.tensor import make_rng

    tr, dv = D.read_dataset(root / "train.json"), D.read_dataset(root / "dev.json")
    vocabs = D.build_vocabularies(tr + dv)
    table = D.load_embeddings(root / "embeddings.txt", vocabs.words, make_rng(seed))
    feats = lambda exs: [D.featurize(e, vocabs) for e in exs]
    return tr, feats(tr), dv, feats(dv), table.matrix, vocabs
