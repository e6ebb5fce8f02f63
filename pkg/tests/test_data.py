import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import SYNTHETIC, qa, squad_json
from jointsan import data as D
from jointsan.errors import AlignmentError, DatasetFormatError
from jointsan.evaluation import normalize_answer
from jointsan.tensor import make_rng


# -- tokenizer and alignment ----------------------------------------------------------
def test_tokenize_offsets():
    text = "Super Bowl 50."
    toks = D.tokenize(text)
    assert [t.text for t in toks] == ["Super", "Bowl", "50", "."]
    assert [(t.start, t.end) for t in toks] == [(0, 5), (6, 10), (11, 13), (13, 14)]
    for t in toks:
        assert text[t.start:t.end] == t.text


def test_tokenize_edge_cases():
    assert D.tokenize("") == []
    assert [t.text for t in D.tokenize("a,b")] == ["a", ",", "b"]
    assert [t.text for t in D.tokenize("(U.S.)")] == ["(", "U.S", ".", ")"]
    assert [t.text for t in D.tokenize("don't stop")] == ["don't", "stop"]


@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=60))
def test_tokens_reconstruct_text(text):
    toks = D.tokenize(text)
    pieces, pos = [], 0
    for t in toks:
        assert t.start >= pos
        assert text[pos:t.start].strip() == ""
        pieces.append(text[pos:t.start] + t.text)
        pos = t.end
    assert "".join(pieces) + text[pos:] == text


def test_char_span_alignment():
    toks = D.tokenize("Super Bowl 50 was")
    assert D.char_span_to_token_span(toks, 6, 13) == (1, 2)
    assert D.char_span_to_token_span(toks, 14, 17) == (3, 3)
    assert D.char_span_to_token_span(toks, 6, 8) == (1, 1)
    with pytest.raises(AlignmentError):
        D.char_span_to_token_span(toks, 5, 6)


# -- parsing ----------------------------------------------------------------------------
def test_parse_dataset(tiny_dataset_text):
    stats = Counter()
    exs = {e.id: e for e in D.parse_dataset(tiny_dataset_text, stats)}
    a1, a2, u1 = exs["a1"], exs["a2"], exs["u1"]
    n = len(D.tokenize(a1.context))
    assert len(a1.passage_tokens) == n + 1
    assert a1.passage_tokens[-1].text == D.NULL
    assert a1.span_text(*a1.train_span) == "Denver Broncos"
    assert a2.gold_spans == [(0, 2), (1, 2)]
    assert a2.train_span == (0, 2)
    assert u1.is_unanswerable and u1.gold_spans == [] and u1.train_span == (n, n)
    assert u1.gold_answer_texts == [""]
    assert stats["examples"] == 3 and stats["unanswerable"] == 1


def test_parse_skips_misaligned_answer(caplog):
    text = squad_json([("Alpha beta gamma.", [qa("ok", "q?", [("beta", 6)]), qa("bad", "q?", [("beta", 0)])])])
    stats = Counter()
    exs = D.parse_dataset(text, stats)
    assert [e.id for e in exs] == ["ok"]
    assert stats["skipped_alignment"] == 1


def test_parse_errors_name_the_path():
    with pytest.raises(DatasetFormatError, match="line 1"):
        D.parse_dataset("{not json")
    broken = {"data": [{"paragraphs": [{"context": "x", "qas": [{"id": "q"}]}]}]}
    with pytest.raises(DatasetFormatError, match=r"data\[0\]\.paragraphs\[0\]\.qas\[0\]"):
        D.parse_dataset(json.dumps(broken))


def test_synthetic_corpus_invariants():
    exs = D.read_dataset(SYNTHETIC / "train.json")
    assert len(exs) == 32
    assert sum(e.is_unanswerable for e in exs) == 16
    for e in exs:
        assert e.passage_tokens[-1].text == D.NULL
        b, t = e.train_span
        assert 0 <= b <= t <= e.null_index
        if e.is_unanswerable:
            assert (b, t) == (e.null_index, e.null_index)
        else:
            assert normalize_answer(e.span_text(b, t)) in {normalize_answer(g) for g in e.gold_answer_texts}


# -- vocabulary and features ------------------------------------------------------------
def _vocabs(examples):
    return D.build_vocabularies(examples, D.DefaultTagProvider())


def test_reserved_ids_stable(tmp_path, tiny_dataset_text):
    vocabs = _vocabs(D.parse_dataset(tiny_dataset_text))
    for v in (vocabs.words, vocabs.pos, vocabs.ner):
        assert [v[t] for t in D.RESERVED] == [D.PAD_ID, D.UNK_ID, D.NULL_ID]
    vocabs.save(tmp_path / "v.json")
    again = D.VocabularySet.load(tmp_path / "v.json")
    assert again.words == vocabs.words and again.pos == vocabs.pos and again.ner == vocabs.ner
    assert vocabs.words["never-seen"] == D.UNK_ID


def test_tag_vocab_caps():
    counts = Counter({f"T{i}": 100 - i for i in range(80)})
    vocab = D.Vocabulary.from_counts(counts, D.POS_CAP)
    assert len(vocab) == D.POS_CAP
    assert vocab["T79"] == D.UNK_ID


def test_match_features_and_tf():
    context = "the cat saw the dog and the Dog ran home"
    text = squad_json([(context, [qa("q", "Where did the dog go", [("home", context.index("home"))])])])
    ex = D.parse_dataset(text)[0]
    fe = D.featurize(ex, _vocabs([ex]))
    words = [t.text for t in ex.passage_tokens[:-1]]
    assert len(words) == 10
    dog, big_dog, cat = words.index("dog"), words.index("Dog"), words.index("cat")
    assert_array_equal(fe.match_features[dog, :3], [1, 1, 1])
    assert_array_equal(fe.match_features[big_dog, :3], [0, 1, 1])
    assert_array_equal(fe.match_features[cat, :3], [0, 0, 0])
    assert_allclose(fe.match_features[dog, 3], 2 / 11)
    assert_allclose(fe.match_features[words.index("the"), 3], 3 / 11)
    assert_array_equal(fe.match_features[-1], 0.0)
    assert fe.passage_ids[-1] == D.NULL_ID and fe.pos_ids[-1] == D.NULL_ID and fe.ner_ids[-1] == D.NULL_ID
    assert np.all((fe.match_features >= 0) & (fe.match_features <= 1))


def test_file_tag_provider(tmp_path):
    path = tmp_path / "tags.jsonl"
    path.write_text(json.dumps({"tokens": ["Cats", "ran"], "pos": ["NNS", "VBD"], "ner": ["O", "O"],
                                "lemma": ["cat", "run"]}) + "\n")
    tags = D.FileTagProvider(path).tag(["Cats", "ran"])
    assert tags.pos == ["NNS", "VBD"] and tags.lemma == ["cat", "run"]
    assert D.FileTagProvider(path).tag(["other"]).pos == ["UNK-POS"]


# -- masking ------------------------------------------------------------------------
def _fe(pids, qids):
    n = len(pids)
    return D.FeaturizedExample("x", np.asarray(pids), np.asarray(qids), np.zeros(n, int), np.zeros(n, int),
                               np.zeros((n, 4)), (n - 1, n - 1), 1)


def test_mask_rate_zero_and_one():
    batch = [_fe([5, 6, 7, D.NULL_ID], [8, 9])]
    assert D.mask_unknown_words(batch, 0.0, make_rng(0))[0] is batch[0]
    out = D.mask_unknown_words(batch, 1.0, make_rng(0))[0]
    assert_array_equal(out.passage_ids, [D.UNK_ID] * 3 + [D.NULL_ID])
    assert_array_equal(out.question_ids, [D.UNK_ID] * 2)
    assert_array_equal(batch[0].passage_ids, [5, 6, 7, D.NULL_ID])


def test_mask_never_touches_pad_or_null():
    out = D.mask_unknown_words([_fe([5, D.PAD_ID, D.NULL_ID], [D.PAD_ID, 4])], 1.0, make_rng(1))[0]
    assert_array_equal(out.passage_ids, [D.UNK_ID, D.PAD_ID, D.NULL_ID])
    assert_array_equal(out.question_ids, [D.PAD_ID, D.UNK_ID])


def test_mask_rate_statistics():
    n, rate = 1_000_000, 0.005
    ids = np.full(n, 7)
    out = D.mask_unknown_words([_fe(ids, ids[:1])], rate, make_rng(42))[0]
    frac = np.mean(out.passage_ids == D.UNK_ID)
    assert abs(frac - rate) < 3 * np.sqrt(rate * (1 - rate) / n)


# -- embeddings -------------------------------------------------------------------------
def _vocab(words):
    v = D.Vocabulary(D.RESERVED)
    for w in words:
        v.add(w)
    return v


def test_load_embeddings(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("cat 1 2 3\ndog 4 5 6\nfish 7 8 9\ncat 0 0 0\nzebra 1 1 1\n")
    table = D.load_embeddings(path, _vocab(["cat", "dog", "fish", "bird"]), make_rng(0))
    assert table.matched == 3 and table.duplicates == 1 and table.dim == 3
    assert table.matrix.shape == (7, 3)
    v = _vocab(["cat", "dog", "fish", "bird"])
    assert_array_equal(table.matrix[v["cat"]], [1, 2, 3])
    assert np.all(np.abs(table.matrix[v["bird"]]) < 0.05)
    assert np.all(np.abs(table.matrix[D.NULL_ID]) < 0.05)
    assert_array_equal(table.matrix[D.PAD_ID], 0.0)


def test_embedding_dimension_mismatch_names_line(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("cat 1 2 3\ndog 4 5\n")
    with pytest.raises(DatasetFormatError, match=":2:"):
        D.load_embeddings(path, _vocab(["cat"]), make_rng(0))


def test_contextual_vectors_roundtrip(tmp_path):
    path = tmp_path / "cove.npz"
    np.savez(path, **{"q1/passage": np.ones((3, 6)), "q1/question": np.zeros((2, 6))})
    vecs = D.load_contextual_vectors(path)
    assert vecs["q1"]["passage"].shape == (3, 6) and vecs["q1"]["question"].shape == (2, 6)


# -- cache ------------------------------------------------------------------------------
def test_cache_roundtrip_is_exact(tmp_path):
    exs = D.read_dataset(SYNTHETIC / "dev.json")
    vocabs = _vocabs(exs)
    feats = [D.featurize(e, vocabs) for e in exs]
    D.save_cache(tmp_path / "c.jsonl", exs, feats)
    exs2, feats2 = D.load_cache(tmp_path / "c.jsonl")
    assert exs2 == exs
    for a, b in zip(feats, feats2):
        assert a.id == b.id and a.span == b.span and a.label == b.label
        for name in ("passage_ids", "question_ids", "pos_ids", "ner_ids", "match_features"):
            assert_array_equal(getattr(a, name), getattr(b, name))
            assert getattr(a, name).dtype == getattr(b, name).dtype


def test_cache_version_checked(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps({"format_version": 999, "count": 0}) + "\n")
    with pytest.raises(DatasetFormatError, match="version"):
        D.load_cache(path)
