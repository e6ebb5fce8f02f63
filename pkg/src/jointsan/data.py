"""SQuAD v2.0 ingestion, tokenization, featurization and embedding tables."""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Protocol, Sequence

import numpy as np

from .errors import AlignmentError, DatasetFormatError

logger = logging.getLogger(__name__)

PAD = "<PAD>"
UNK = "<UNK>"
NULL = "<NULL>"
RESERVED = (PAD, UNK, NULL)
PAD_ID, UNK_ID, NULL_ID = 0, 1, 2

POS_CAP = 64
NER_CAP = 32
CACHE_FORMAT_VERSION = 1

# word-internal . ' - are kept (3.5, don't, U.S); any other symbol is its own token
_TOKEN_RE = re.compile(r"\w+(?:[.'\-]\w+)*|[^\w\s]", re.UNICODE)


class Token(NamedTuple):
    text: str
    start: int
    end: int


def tokenize(text: str) -> list[Token]:
    """Split on whitespace and detach punctuation, keeping character offsets."""
    return [Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def char_span_to_token_span(tokens: Sequence[Token], char_begin: int, char_end: int) -> tuple[int, int]:
    """Smallest token interval covering the half-open range ``[char_begin, char_end)``."""
    hits = [i for i, tok in enumerate(tokens)
            if tok.start < char_end and tok.end > char_begin and tok.end > tok.start]
    if not hits:
        raise AlignmentError(f"character range [{char_begin}, {char_end}) covers no token")
    return hits[0], hits[-1]


@dataclass
class Example:
    """One question over one passage; the passage always ends with the NULL sentinel."""

    id: str
    context: str
    question: str
    passage_tokens: list[Token]
    question_tokens: list[Token]
    gold_spans: list[tuple[int, int]]
    gold_answer_texts: list[str]
    is_unanswerable: bool

    @property
    def null_index(self) -> int:
        return len(self.passage_tokens) - 1

    @property
    def train_span(self) -> tuple[int, int]:
        # first listed span for answerable questions, the NULL slot otherwise
        if self.is_unanswerable or not self.gold_spans:
            return self.null_index, self.null_index
        return self.gold_spans[0]

    @property
    def label(self) -> int:
        return int(self.is_unanswerable)

    def span_text(self, begin: int, end: int) -> str:
        if begin >= self.null_index:
            return ""
        end = min(end, self.null_index - 1)
        return self.context[self.passage_tokens[begin].start:self.passage_tokens[end].end]

    def to_dict(self) -> dict:
        return {
            "id": self.id, "context": self.context, "question": self.question,
            "passage_tokens": [list(t) for t in self.passage_tokens],
            "question_tokens": [list(t) for t in self.question_tokens],
            "gold_spans": [list(s) for s in self.gold_spans],
            "gold_answer_texts": self.gold_answer_texts,
            "is_unanswerable": self.is_unanswerable,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Example":
        return cls(
            id=d["id"], context=d["context"], question=d["question"],
            passage_tokens=[Token(*t) for t in d["passage_tokens"]],
            question_tokens=[Token(*t) for t in d["question_tokens"]],
            gold_spans=[tuple(s) for s in d["gold_spans"]],
            gold_answer_texts=list(d["gold_answer_texts"]),
            is_unanswerable=bool(d["is_unanswerable"]),
        )


def _require(obj, key: str, path: str, kind):
    if not isinstance(obj, dict) or key not in obj:
        raise DatasetFormatError(f"{path}: missing key {key!r}")
    value = obj[key]
    if not isinstance(value, kind):
        raise DatasetFormatError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def parse_dataset(json_text: str, stats: Optional[Counter] = None) -> list[Example]:
    """Parse SQuAD v2.0 JSON into one :class:`Example` per question.

    Answers whose text does not appear at the stated offset are logged and the
    question is skipped; ``stats['skipped_alignment']`` counts them.
    """
    stats = stats if stats is not None else Counter()
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc

    examples: list[Example] = []
    for a, article in enumerate(_require(doc, "data", "$", list)):
        for p, para in enumerate(_require(article, "paragraphs", f"$.data[{a}]", list)):
            ppath = f"$.data[{a}].paragraphs[{p}]"
            context = _require(para, "context", ppath, str)
            ptoks = tokenize(context)
            passage = ptoks + [Token(NULL, len(context), len(context))]
            for q, qa in enumerate(_require(para, "qas", ppath, list)):
                qpath = f"{ppath}.qas[{q}]"
                qid = _require(qa, "id", qpath, str)
                question = _require(qa, "question", qpath, str)
                impossible = bool(qa.get("is_impossible", False))
                answers = _require(qa, "answers", qpath, list)
                spans, texts = [], []
                ok = True
                if not impossible:
                    for k, ans in enumerate(answers):
                        apath = f"{qpath}.answers[{k}]"
                        text = _require(ans, "text", apath, str)
                        start = _require(ans, "answer_start", apath, int)
                        end = start + len(text)
                        if context[start:end] != text:
                            logger.warning("%s: answer %r not found at offset %d; skipping %s",
                                           apath, text, start, qid)
                            ok = False
                            break
                        try:
                            spans.append(char_span_to_token_span(ptoks, start, end))
                        except AlignmentError:
                            logger.warning("%s: answer %r aligns to no token; skipping %s", apath, text, qid)
                            ok = False
                            break
                        texts.append(text)
                    if ok and not spans:
                        raise DatasetFormatError(f"{qpath}: answerable question without answers")
                if not ok:
                    stats["skipped_alignment"] += 1
                    continue
                examples.append(Example(
                    id=qid, context=context, question=question,
                    passage_tokens=passage, question_tokens=tokenize(question),
                    gold_spans=spans, gold_answer_texts=texts if not impossible else [""],
                    is_unanswerable=impossible,
                ))
                stats["examples"] += 1
                stats["unanswerable"] += int(impossible)
    return examples


def read_dataset(path, stats: Optional[Counter] = None) -> list[Example]:
    return parse_dataset(Path(path).read_text(encoding="utf-8"), stats)


# -- tagging -----------------------------------------------------------------------
class TagResult(NamedTuple):
    pos: list[str]
    ner: list[str]
    lemma: list[str]


class TagProvider(Protocol):
    def tag(self, words: Sequence[str]) -> TagResult: ...


class DefaultTagProvider:
    """Emits a single placeholder POS/NER tag; lemma is the lowercase form."""

    pos_tag = "UNK-POS"
    ner_tag = "UNK-NER"

    def tag(self, words: Sequence[str]) -> TagResult:
        return TagResult([self.pos_tag] * len(words), [self.ner_tag] * len(words), [w.lower() for w in words])


class FileTagProvider:
    """Tags looked up from a JSON-lines file of pre-tagged token sequences.

    Each line holds ``{"tokens": [...], "pos": [...], "ner": [...], "lemma": [...]}``
    (``lemma`` optional).  Unknown sequences fall back to ``fallback``.
    """

    def __init__(self, path, fallback: Optional[TagProvider] = None):
        self.fallback = fallback or DefaultTagProvider()
        self._table: dict[tuple[str, ...], TagResult] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                words = tuple(rec["tokens"])
                lemma = rec.get("lemma") or [w.lower() for w in words]
                if not (len(rec["pos"]) == len(rec["ner"]) == len(lemma) == len(words)):
                    raise DatasetFormatError(f"{path}:{lineno}: tag lengths disagree with tokens")
                self._table[words] = TagResult(list(rec["pos"]), list(rec["ner"]), list(lemma))

    def tag(self, words: Sequence[str]) -> TagResult:
        hit = self._table.get(tuple(words))
        return hit if hit is not None else self.fallback.tag(words)


# -- vocabularies --------------------------------------------------------------------
class Vocabulary:
    """Token to id map; ids 0, 1, 2 are always PAD, UNK and NULL."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @classmethod
    def from_counts(cls, counts: Counter, cap: Optional[int] = None) -> "Vocabulary":
        ordered = sorted((t for t in counts if t not in RESERVED), key=lambda t: (-counts[t], t))
        if cap is not None:
            ordered = ordered[:max(cap - len(RESERVED), 0)]
        return cls(ordered)

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if tuple(itos[:len(RESERVED)]) != RESERVED:
            raise DatasetFormatError("vocabulary does not start with the reserved tokens")
        return cls(itos[len(RESERVED):])


@dataclass
class VocabularySet:
    words: Vocabulary
    pos: Vocabulary
    ner: Vocabulary

    def save(self, path) -> None:
        payload = {"format_version": CACHE_FORMAT_VERSION, "words": self.words.to_list(),
                   "pos": self.pos.to_list(), "ner": self.ner.to_list()}
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "VocabularySet":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(Vocabulary.from_list(d["words"]), Vocabulary.from_list(d["pos"]),
                   Vocabulary.from_list(d["ner"]))


def build_vocabularies(examples: Iterable[Example], tag_provider: Optional[TagProvider] = None,
                       pos_cap: int = POS_CAP, ner_cap: int = NER_CAP) -> VocabularySet:
    tag_provider = tag_provider or DefaultTagProvider()
    words, pos, ner = Counter(), Counter(), Counter()
    for ex in examples:
        pwords = [t.text for t in ex.passage_tokens[:-1]]
        words.update(pwords)
        words.update(t.text for t in ex.question_tokens)
        tags = tag_provider.tag(pwords)
        pos.update(tags.pos)
        ner.update(tags.ner)
    return VocabularySet(Vocabulary.from_counts(words), Vocabulary.from_counts(pos, pos_cap),
                         Vocabulary.from_counts(ner, ner_cap))


# -- featurization ---------------------------------------------------------------------
@dataclass
class FeaturizedExample:
    """Id and feature arrays for one example, ready for batching.

    ``match_features`` columns: exact match, lowercase match, lemma match, term
    frequency.  The last passage row belongs to the NULL token.
    """

    id: str
    passage_ids: np.ndarray
    question_ids: np.ndarray
    pos_ids: np.ndarray
    ner_ids: np.ndarray
    match_features: np.ndarray
    span: tuple[int, int]
    label: int

    @property
    def passage_len(self) -> int:
        return len(self.passage_ids)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "passage_ids": self.passage_ids.tolist(), "question_ids": self.question_ids.tolist(),
            "pos_ids": self.pos_ids.tolist(), "ner_ids": self.ner_ids.tolist(),
            "match_features": self.match_features.tolist(),
            "span": list(self.span), "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturizedExample":
        return cls(
            id=d["id"],
            passage_ids=np.asarray(d["passage_ids"], dtype=np.int64),
            question_ids=np.asarray(d["question_ids"], dtype=np.int64),
            pos_ids=np.asarray(d["pos_ids"], dtype=np.int64),
            ner_ids=np.asarray(d["ner_ids"], dtype=np.int64),
            match_features=np.asarray(d["match_features"], dtype=np.float64).reshape(-1, 4),
            span=tuple(d["span"]), label=int(d["label"]),
        )


def featurize(example: Example, vocabs: VocabularySet,
              tag_provider: Optional[TagProvider] = None) -> FeaturizedExample:
    tag_provider = tag_provider or DefaultTagProvider()
    pwords = [t.text for t in example.passage_tokens[:-1]]
    qwords = [t.text for t in example.question_tokens]
    ptags = tag_provider.tag(pwords)
    qtags = tag_provider.tag(qwords)

    length = len(pwords) + 1
    q_orig = set(qwords)
    q_lower = {w.lower() for w in qwords}
    q_lemma = set(qtags.lemma)
    counts = Counter(w.lower() for w in pwords)
    feats = np.zeros((length, 4), dtype=np.float64)
    for i, w in enumerate(pwords):
        feats[i, 0] = w in q_orig
        feats[i, 1] = w.lower() in q_lower
        feats[i, 2] = ptags.lemma[i] in q_lemma
        feats[i, 3] = counts[w.lower()] / length

    passage_ids = np.array([vocabs.words[w] for w in pwords] + [NULL_ID], dtype=np.int64)
    question_ids = np.array([vocabs.words[w] for w in qwords], dtype=np.int64)
    pos_ids = np.array([vocabs.pos[t] for t in ptags.pos] + [NULL_ID], dtype=np.int64)
    ner_ids = np.array([vocabs.ner[t] for t in ptags.ner] + [NULL_ID], dtype=np.int64)
    return FeaturizedExample(example.id, passage_ids, question_ids, pos_ids, ner_ids, feats,
                             example.train_span, example.label)


def mask_unknown_words(batch: Sequence[FeaturizedExample], rate: float,
                       rng: np.random.Generator) -> list[FeaturizedExample]:
    """Replace word ids by the unknown id with probability ``rate``.

    NULL and padding ids are never replaced.  Inputs are not modified.
    """
    if rate <= 0:
        return list(batch)
    out = []
    for fe in batch:
        ids = {}
        for name in ("passage_ids", "question_ids"):
            arr = getattr(fe, name)
            hit = (rng.random(arr.shape) < rate) & (arr != NULL_ID) & (arr != PAD_ID)
            ids[name] = np.where(hit, UNK_ID, arr)
        out.append(dataclasses.replace(fe, **ids))
    return out


# -- embeddings ------------------------------------------------------------------------
@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    matched: int = 0
    duplicates: int = 0
    trainable: bool = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def load_embeddings(path, vocab: Vocabulary, rng: np.random.Generator, dim: Optional[int] = None,
                    trainable: bool = False) -> EmbeddingTable:
    """Read a ``token v1 ... vD`` text file into a ``len(vocab) x D`` table.

    Tokens missing from the file (including UNK and NULL) draw from
    uniform(-0.05, 0.05); the padding row is zero.  The first occurrence of a
    duplicated token wins.
    """
    found: dict[int, np.ndarray] = {}
    duplicates = 0
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise DatasetFormatError(f"{path}:{lineno}: expected {dim} values, found {len(values)}")
            if token in seen:
                duplicates += 1
                logger.warning("%s:%d: duplicate token %r ignored", path, lineno, token)
                continue
            seen.add(token)
            if token in vocab:
                try:
                    found[vocab.stoi[token]] = np.asarray(values, dtype=np.float64)
                except ValueError as exc:
                    raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
    if dim is None:
        raise DatasetFormatError(f"{path}: no embedding rows")
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    matrix[PAD_ID] = 0.0
    for idx, vec in found.items():
        matrix[idx] = vec
    return EmbeddingTable(matrix, matched=len(found), duplicates=duplicates, trainable=trainable)


# -- optional contextual vectors -------------------------------------------------------
def load_contextual_vectors(path) -> dict[str, dict[str, np.ndarray]]:
    """Read precomputed per-token vectors from an ``.npz`` archive.

    Keys are ``<example id>/passage`` and ``<example id>/question``; each array
    is ``tokens x dim``.  Passage arrays may omit the NULL row.
    """
    out: dict[str, dict[str, np.ndarray]] = {}
    with np.load(path) as archive:
        for key in archive.files:
            qid, _, side = key.rpartition("/")
            if side not in ("passage", "question"):
                raise DatasetFormatError(f"{path}: unexpected key {key!r}")
            out.setdefault(qid, {})[side] = np.asarray(archive[key], dtype=np.float64)
    return out


# -- cache -----------------------------------------------------------------------------
def save_cache(path, examples: Sequence[Example], featurized: Sequence[FeaturizedExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": "jointsan.featurized", "format_version": CACHE_FORMAT_VERSION,
                  "count": len(examples)}
        fh.write(json.dumps(header) + "\n")
        for ex, fe in zip(examples, featurized):
            fh.write(json.dumps({"example": ex.to_dict(), "features": fe.to_dict()}, ensure_ascii=False) + "\n")


def load_cache(path) -> tuple[list[Example], list[FeaturizedExample]]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format_version") != CACHE_FORMAT_VERSION:
            raise DatasetFormatError(f"{path}: unsupported cache version {header.get('format_version')}")
        examples, feats = [], []
        for line in fh:
            rec = json.loads(line)
            examples.append(Example.from_dict(rec["example"]))
            feats.append(FeaturizedExample.from_dict(rec["features"]))
    if len(examples) != header["count"]:
        raise DatasetFormatError(f"{path}: truncated cache ({len(examples)} of {header['count']} records)")
    return examples, feats
