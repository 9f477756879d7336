"""Seeded synthetic corpora for desk-scale training checks.

Each relation owns a trigger word; a sentence holds the triggers of its
positive relations among filler words and two capitalised entity mentions.
Labels are a function of trigger presence, so the task is linearly
separable over bag-of-words features.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, LabeledExample
from .embedding import EmbeddingStore


def _words(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(n)]


def make_store(n_relations: int, dim: int = 16, n_filler: int = 60,
               n_entities: int = 30, seed: int = 0,
               trigger_scale: float = 0.5) -> EmbeddingStore:
    """Random vectors; trigger words may get a larger norm than fillers."""
    rng = np.random.default_rng(seed)
    words = (_words("trig", n_relations) + _words("fill", n_filler)
             + [w.lower() for w in _words("Ent", n_entities)])
    vectors = rng.normal(0.0, 0.5, size=(len(words), dim))
    vectors[:n_relations] *= trigger_scale / 0.5
    return EmbeddingStore(words, vectors)


def _relation_weights(n_relations: int, zipf: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n_relations + 1) ** zipf
    return w / w.sum()


def make_examples(n: int, n_relations: int, rng: np.random.Generator,
                  max_positive: int = 3, zipf: float = 0.0, n_filler: int = 60,
                  n_entities: int = 30,
                  length: tuple[int, int] = (8, 16)) -> list[LabeledExample]:
    """``n`` sentences with 1..max_positive relations drawn by Zipf weight."""
    weights = _relation_weights(n_relations, zipf)
    out = []
    for _ in range(n):
        k = int(rng.integers(1, max_positive + 1))
        rels = rng.choice(n_relations, size=k, replace=False, p=weights)
        size = int(rng.integers(*length))
        tokens = [f"fill{j}" for j in rng.integers(0, n_filler, size=size)]
        for t in (f"trig{r}" for r in rels):
            tokens.insert(int(rng.integers(0, len(tokens) + 1)), t)
        subj, obj = rng.choice(n_entities, size=2, replace=False)
        s_at = int(rng.integers(0, len(tokens) + 1))
        tokens.insert(s_at, f"Ent{subj}")
        o_at = int(rng.integers(0, len(tokens) + 1))
        tokens.insert(o_at, f"Ent{obj}")
        if o_at <= s_at:
            s_at += 1
        labels = np.zeros(n_relations, dtype=np.int8)
        labels[rels] = 1
        out.append(LabeledExample(tuple(tokens), ((s_at, s_at + 1),),
                                  ((o_at, o_at + 1),), labels))
    return out


def overfit_fixture(seed: int = 0, n: int = 50, n_relations: int = 10):
    """Small separable corpus; validation and test are the training split."""
    rng = np.random.default_rng(seed)
    store = make_store(n_relations, seed=seed)
    train = make_examples(n, n_relations, rng)
    vocab = tuple(f"rel{i:02d}" for i in range(n_relations))
    ds = Dataset(vocab, {"train": train, "validation": train, "test": train}, "overfit")
    return ds, store


def imbalanced_benchmark(seed: int = 0, n: int = 500, n_relations: int = 50,
                         sizes: tuple[int, int, int] = (350, 50, 100), zipf: float = 0.5,
                         length: tuple[int, int] = (4, 10), n_filler: int = 30,
                         trigger_scale: float = 2.0):
    """Zipf-distributed relations with at most three positives per sentence.

    Each relation is positive in roughly 4% of sentences.  Short sentences and
    large-norm triggers keep the task learnable within a few dozen epochs at
    hidden size 32.
    """
    if sum(sizes) != n:
        raise ValueError("split sizes must sum to n")
    rng = np.random.default_rng(seed)
    store = make_store(n_relations, n_filler=n_filler, seed=seed, trigger_scale=trigger_scale)
    ex = make_examples(n, n_relations, rng, zipf=zipf, n_filler=n_filler, length=length)
    a, b, _ = sizes
    vocab = tuple(f"rel{i:02d}" for i in range(n_relations))
    ds = Dataset(vocab, {"train": ex[:a], "validation": ex[a:a + b], "test": ex[a + b:]},
                 "imbalanced")
    return ds, store
