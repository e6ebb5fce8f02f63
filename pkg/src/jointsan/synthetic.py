"""Deterministic toy corpus in SQuAD v2.0 format, plus a matching embedding file.

Each passage states a few facts about one person; questions ask for one fact.
Unanswerable questions either ask about a fact the passage never states or
about a person it never mentions.

    python -m jointsan.synthetic data/synthetic
"""

from __future__ import annotations

import json
import re
import sys
from pathlib import Path

import numpy as np

from .data import tokenize
from .tensor import make_rng

NAMES = ["Alaric", "Brenna", "Corvin", "Delphine", "Eamon", "Fenella", "Gideon", "Hester", "Isidore",
         "Juniper", "Kestrel", "Lucan", "Marisol", "Nestor", "Odette", "Percival", "Quilla", "Rowena",
         "Silas", "Tamsin", "Ulric", "Verity", "Wystan", "Yseult"]
CITIES = ["Marlow", "Ashford", "Bexley", "Calder", "Dunmore", "Elgin", "Falkirk", "Glenrock", "Halden",
          "Inverby", "Kelso", "Larkhall", "Morden", "Norwich", "Oakham", "Penrith"]
YEARS = [str(y) for y in range(1801, 1841)]
SUBJECTS = ["chemistry", "botany", "geology", "astronomy", "music", "law", "medicine", "philosophy",
            "history", "mathematics"]
SCHOOLS = ["Harrowgate", "Whitcombe", "Ravensfield", "Thornbury", "Elmstead", "Kingsmere"]
JOBS = ["printer", "surveyor", "clockmaker", "weaver", "engraver", "cartographer", "glazier", "tanner"]

# fact -> (sentence template, question template, answer slot)
FACTS = {
    "born_where": ("{name} was born in {city} in {year} .", "Where was {name} born ?", "city"),
    "born_when": ("{name} was born in {city} in {year} .", "When was {name} born ?", "year"),
    "study_what": ("{name} studied {subject} at {school} .", "What did {name} study ?", "subject"),
    "study_where": ("{name} studied {subject} at {school} .", "Where did {name} study ?", "school"),
    "work": ("Later {name} worked as a {job} .", "What did {name} work as ?", "job"),
    "move": ("In {year2} {name} moved to {city2} .", "Where did {name} move to ?", "city2"),
}
SENTENCES = {"born": ("born_where", "born_when"), "study": ("study_what", "study_where"),
             "work": ("work",), "move": ("move",)}


def _sample_slots(rng) -> dict:
    cities = rng.choice(CITIES, size=2, replace=False)
    years = rng.choice(YEARS, size=2, replace=False)
    return {"city": str(cities[0]), "city2": str(cities[1]), "year": str(years[0]), "year2": str(years[1]),
            "subject": str(rng.choice(SUBJECTS)), "school": str(rng.choice(SCHOOLS)), "job": str(rng.choice(JOBS))}


def make_example(rng, qid: str, unanswerable: bool) -> dict:
    name, other = (str(x) for x in rng.choice(NAMES, size=2, replace=False))
    slots = _sample_slots(rng)
    kinds = list(SENTENCES)
    present = [kinds[i] for i in rng.choice(len(kinds), size=int(rng.integers(2, 4)), replace=False)]
    present.sort(key=kinds.index)

    context = " ".join(FACTS[SENTENCES[k][0]][0].format(name=name, **slots) for k in present)
    if not unanswerable:
        fact = str(rng.choice([f for k in present for f in SENTENCES[k]]))
        _, qtpl, slot = FACTS[fact]
        answer = slots[slot]
        sentence = FACTS[SENTENCES[next(k for k in present if fact in SENTENCES[k])][0]][0].format(name=name, **slots)
        sent_start = context.index(sentence)
        start = sent_start + sentence.index(" " + answer + " ") + 1
        qa = {"id": qid, "question": qtpl.format(name=name), "is_impossible": False,
              "answers": [{"text": answer, "answer_start": start}]}
    else:
        absent = [k for k in kinds if k not in present]
        if absent and rng.random() < 0.5:
            fact = str(rng.choice([f for k in absent for f in SENTENCES[k]]))
            question = FACTS[fact][1].format(name=name)
        else:
            fact = str(rng.choice([f for k in present for f in SENTENCES[k]]))
            question = FACTS[fact][1].format(name=other)
        qa = {"id": qid, "question": question, "is_impossible": True, "answers": []}
    return {"context": context, "qas": [qa]}


def make_split(seed: int, size: int, prefix: str) -> dict:
    """``size`` questions, the second half of them unanswerable, in shuffled order."""
    rng = make_rng(seed)
    flags = [i >= size // 2 for i in range(size)]
    order = rng.permutation(size)
    paragraphs = [make_example(rng, f"{prefix}-{i:03d}", flags[j]) for i, j in enumerate(order)]
    return {"version": "v2.0", "data": [{"title": f"synthetic-{prefix}", "paragraphs": paragraphs}]}


def vocabulary_words() -> list[str]:
    words = set(NAMES) | set(CITIES) | set(YEARS) | set(SUBJECTS) | set(SCHOOLS) | set(JOBS)
    for sent, question, _ in FACTS.values():
        words.update(tok.text for tok in tokenize(re.sub(r"\{\w+\}", " ", sent + " " + question)))
    return sorted(words)


def make_embeddings(seed: int, dim: int = 50) -> list[tuple[str, np.ndarray]]:
    """Random vectors clustered by word category, standing in for pretrained vectors."""
    rng = make_rng(seed)
    groups = {"name": NAMES, "city": CITIES, "year": YEARS, "subject": SUBJECTS, "school": SCHOOLS, "job": JOBS}
    centers = {g: rng.normal(0, 1, dim) for g in groups}
    rows = []
    for word in vocabulary_words():
        group = next((g for g, ws in groups.items() if word in ws), None)
        base = centers[group] if group else rng.normal(0, 1, dim)
        rows.append((word, 0.5 * (base + 0.5 * rng.normal(0, 1, dim))))
    return rows


def write_corpus(out_dir, train_size: int = 32, dev_size: int = 32, seed: int = 20181107, dim: int = 50) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, size, offset in (("train", train_size, 0), ("dev", dev_size, 1)):
        doc = make_split(seed + offset, size, name)
        (out / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    with open(out / "embeddings.txt", "w", encoding="utf-8") as fh:
        for word, vec in make_embeddings(seed + 2, dim):
            fh.write(word + " " + " ".join(f"{v:.5f}" for v in vec) + "\n")


if __name__ == "__main__":
    write_corpus(sys.argv[1] if len(sys.argv) > 1 else "data/synthetic")
