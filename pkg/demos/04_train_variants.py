"""Train the span-only baseline and the joint model on the synthetic corpus and compare the three decodings.

    python demos/04_train_variants.py [epochs]

The joint model is trained once; "joint" and "joint + classifier" differ only in
whether the classifier may empty the answer at decoding time.
"""

import sys
from pathlib import Path

from jointsan import data as D
from jointsan.config import TrainConfig
from jointsan.tensor import make_rng
from jointsan.training import train

root = Path(__file__).resolve().parents[1] / "data" / "synthetic_large"
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60

train_ex, dev_ex = D.read_dataset(root / "train.json"), D.read_dataset(root / "dev.json")
vocabs = D.build_vocabularies(train_ex + dev_ex)
matrix = D.load_embeddings(root / "embeddings.txt", vocabs.words, make_rng(0)).matrix
train_fe = [D.featurize(e, vocabs) for e in train_ex]
dev_fe = [D.featurize(e, vocabs) for e in dev_ex]

base = dict(d=32, steps=3, embedding_dim=50, batch_size=32, epochs=epochs, lr_halving_period=1000, seed=1)
rows = {}
for variant in ("span-only", "joint+classifier"):
    cfg = TrainConfig(variant=variant, **base)
    print(f"training {variant} for {epochs} epochs ...", flush=True)
    hist = train(cfg, train_ex, train_fe, matrix, len(vocabs.pos), len(vocabs.ner), dev_ex, dev_fe).history
    # each row reports its best dev epoch
    if variant == "span-only":
        best = max(hist, key=lambda r: r["dev_f1_span"])
        rows["span-only"] = (best["dev_em_span"], best["dev_f1_span"], best["epoch"])
    else:
        best = max(hist, key=lambda r: r["dev_f1_span"])
        rows["joint"] = (best["dev_em_span"], best["dev_f1_span"], best["epoch"])
        best = max(hist, key=lambda r: r["dev_f1_cls"])
        rows["joint+classifier"] = (best["dev_em_cls"], best["dev_f1_cls"], best["epoch"])
        print(f"classifier accuracy at that epoch: {best['dev_cls_acc']:.2f}")

print(f"\n{'model':<24} {'EM':>7} {'F1':>7} {'epoch':>6}")
for name, (em, f1, ep) in rows.items():
    print(f"{name:<24} {em:7.2f} {f1:7.2f} {ep:6d}")
