"""From SQuAD 2.0 JSON to id arrays and hand features."""

from collections import Counter
from pathlib import Path

import numpy as np

from jointsan import data as D
from jointsan.tensor import make_rng

root = Path(__file__).resolve().parents[1] / "data" / "synthetic"
stats = Counter()
examples = D.read_dataset(root / "dev.json", stats)
print(f"{stats['examples']} questions, {stats['unanswerable']} unanswerable, "
      f"{stats['skipped_alignment']} skipped")

ex = next(e for e in examples if not e.is_unanswerable)
print("\ncontext :", ex.context)
print("question:", ex.question)
print("tokens  :", [t.text for t in ex.passage_tokens])
b, e = ex.train_span
print(f"span    : tokens {b}..{e} -> {ex.span_text(b, e)!r}")

unans = next(e for e in examples if e.is_unanswerable)
print("\nunanswerable:", unans.question, "-> span", unans.train_span, "(the NULL slot)")

vocabs = D.build_vocabularies(examples)
feats = D.featurize(ex, vocabs)
np.set_printoptions(precision=3, suppress=True)
print("\nword ids :", feats.passage_ids)
print("match features (exact, lower, lemma, tf) for the first five tokens:")
print(feats.match_features[:5])

table = D.load_embeddings(root / "embeddings.txt", vocabs.words, make_rng(0))
print(f"\nembedding table {table.matrix.shape}, {table.matched} rows from the file")
