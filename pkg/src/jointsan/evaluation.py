"""Exact match, macro F1 and classifier accuracy with SQuAD 2.0 conventions."""

from __future__ import annotations

import json
import logging
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

logger = logging.getLogger(__name__)

_ARTICLES = re.compile(r"\b(a|an|the)\b", re.UNICODE)
_PUNCT = frozenset(string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, strip ASCII punctuation and the articles a/an/the, collapse whitespace."""
    text = "".join(ch for ch in text.lower() if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def _f1(gold: str, pred: str) -> float:
    gold_toks = normalize_answer(gold).split()
    pred_toks = normalize_answer(pred).split()
    if not gold_toks or not pred_toks:
        return float(gold_toks == pred_toks)
    same = sum((Counter(gold_toks) & Counter(pred_toks)).values())
    if same == 0:
        return 0.0
    precision = same / len(pred_toks)
    recall = same / len(gold_toks)
    return 2 * precision * recall / (precision + recall)


def gold_answers(texts: Sequence[str]) -> list[str]:
    """Drop golds that normalize to nothing; an unanswerable question keeps ``[""]``."""
    kept = [t for t in texts if normalize_answer(t)]
    return kept or [""]


def score_question(prediction: str, golds: Sequence[str], is_unanswerable: bool = False) -> tuple[int, float]:
    golds = [""] if is_unanswerable else gold_answers(golds)
    norm_pred = normalize_answer(prediction)
    em = int(any(normalize_answer(g) == norm_pred for g in golds))
    f1 = max(_f1(g, prediction) for g in golds)
    return em, f1


@dataclass
class EvalReport:
    em: float
    f1: float
    classifier_accuracy: Optional[float]
    total: int
    counts: dict = field(default_factory=dict)
    per_question: dict = field(default_factory=dict)
    missing: int = 0

    def to_dict(self) -> dict:
        return {
            "exact": self.em, "f1": self.f1, "classifier_accuracy": self.classifier_accuracy,
            "total": self.total, "missing": self.missing, **self.counts,
        }


def _pct(values) -> float:
    values = list(values)
    return 100.0 * sum(values) / len(values) if values else 0.0


def evaluate(predictions: Mapping[str, str], dataset: Sequence, unanswerable_probs: Optional[Mapping[str, float]] = None,
             threshold: float = 0.5) -> EvalReport:
    """Score ``predictions`` (id -> answer string) against ``dataset`` examples.

    Questions without a prediction score zero; predictions for unknown ids are
    ignored with a warning.  Classifier accuracy is reported when
    ``unanswerable_probs`` is given.
    """
    ids = {ex.id for ex in dataset}
    unknown = [k for k in predictions if k not in ids]
    if unknown:
        logger.warning("%d predictions have unknown ids (e.g. %r); ignored", len(unknown), unknown[0])
    per_q: dict[str, tuple[int, float]] = {}
    missing = 0
    has_ans, no_ans = [], []
    for ex in dataset:
        if ex.id not in predictions:
            missing += 1
            per_q[ex.id] = (0, 0.0)
        else:
            per_q[ex.id] = score_question(predictions[ex.id], ex.gold_answer_texts, ex.is_unanswerable)
        (no_ans if ex.is_unanswerable else has_ans).append(ex.id)

    counts = {"HasAns_total": len(has_ans), "NoAns_total": len(no_ans)}
    if has_ans:
        counts.update(HasAns_exact=_pct(per_q[i][0] for i in has_ans), HasAns_f1=_pct(per_q[i][1] for i in has_ans))
    if no_ans:
        counts.update(NoAns_exact=_pct(per_q[i][0] for i in no_ans), NoAns_f1=_pct(per_q[i][1] for i in no_ans))

    acc = None
    if unanswerable_probs is not None:
        acc = _pct((unanswerable_probs.get(ex.id, 0.0) > threshold) == ex.is_unanswerable for ex in dataset)
    return EvalReport(
        em=_pct(s[0] for s in per_q.values()), f1=_pct(s[1] for s in per_q.values()),
        classifier_accuracy=acc, total=len(per_q), counts=counts, per_question=per_q, missing=missing,
    )


def write_predictions(path, predictions: Mapping[str, str]) -> None:
    Path(path).write_text(json.dumps(dict(predictions), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_predictions(path) -> dict[str, str]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise ValueError(f"{path}: predictions must be a JSON object of id -> answer string")
    return data
