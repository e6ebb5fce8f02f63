"""Scoring conventions: normalization, unanswerable questions, multiple golds."""

from jointsan.evaluation import normalize_answer, score_question

for text in ["The Normans.", "a  an the", "Saint-Denis", "“quoted”"]:
    print(f"normalize({text!r}) = {normalize_answer(text)!r}")

print()
cases = [
    ("Denver Broncos", ["Denver Broncos"], False),
    ("the Broncos", ["Denver Broncos"], False),
    ("region of France", ["Normandy", "the region of Normandy", "France"], False),
    ("", [""], True),
    ("Paris", [""], True),
    ("", ["Paris"], False),
]
for pred, golds, unanswerable in cases:
    em, f1 = score_question(pred, golds, unanswerable)
    print(f"{pred!r:20} vs {golds!r:50} EM={em} F1={f1:.3f}")
