"""Corpus import/export, relation vocabulary, statistics and batching.

Two input formats are understood:

``copyre-json``
    One record per sentence with ``sentText`` and ``relationMentions``
    (each mention carries ``em1Text`` (subject), ``em2Text`` (object) and
    ``label``).  Files may be JSON lines or a single JSON array.
``canonical-jsonl``
    One object per line: ``tokens``, ``subjects``, ``objects`` (lists of
    ``[start, end)`` pairs) and ``relations`` (relation names).
"""

from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .embedding import Span, tokenize

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
FORMATS = ("copyre-json", "canonical-jsonl")
NO_RELATION = {"None", "NA", ""}


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledExample:
    tokens: tuple[str, ...]
    subjects: tuple[Span, ...]
    objects: tuple[Span, ...]
    labels: np.ndarray  # int8 vector over the relation vocabulary

    def __eq__(self, other):
        return (isinstance(other, LabeledExample)
                and self.tokens == other.tokens
                and self.subjects == other.subjects
                and self.objects == other.objects
                and np.array_equal(self.labels, other.labels))

    def relations(self, vocab: Sequence[str]) -> list[str]:
        return [vocab[i] for i in np.flatnonzero(self.labels)]


@dataclass
class Dataset:
    relation_vocab: tuple[str, ...]
    splits: dict[str, list[LabeledExample]]
    name: str = "corpus"
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def n_relations(self) -> int:
        return len(self.relation_vocab)

    def __getitem__(self, split: str) -> list[LabeledExample]:
        return self.splits[split]

    def label_matrix(self, split: str) -> np.ndarray:
        ex = self.splits[split]
        if not ex:
            return np.zeros((0, self.n_relations), dtype=np.int8)
        return np.stack([e.labels for e in ex])

    def sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.splits.items()}


@dataclass
class _RawExample:
    tokens: tuple[str, ...]
    subjects: set
    objects: set
    relations: set


def find_span(tokens: Sequence[str], entity: Sequence[str]) -> Span | None:
    n = len(entity)
    if n == 0:
        return None
    for i in range(len(tokens) - n + 1):
        if tuple(tokens[i:i + n]) == tuple(entity):
            return (i, i + n)
    return None


def _read_records(stream: TextIO) -> Iterator[tuple[int, dict]]:
    text = stream.read()
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            records = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"record 0: invalid JSON array ({exc})") from None
        yield from enumerate(records)
        return
    idx = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            yield idx, json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"record {idx}: invalid JSON ({exc})") from None
        idx += 1


def _parse_copyre(idx: int, rec: dict, counters: dict) -> _RawExample | None:
    try:
        tokens = tuple(tokenize(rec["sentText"]))
        mentions = rec["relationMentions"]
    except (KeyError, TypeError) as exc:
        raise CorpusFormatError(f"record {idx}: missing field {exc}") from None
    ex = _RawExample(tokens, set(), set(), set())
    for m in mentions:
        try:
            label, subj, obj = m["label"], m["em1Text"], m["em2Text"]
        except (KeyError, TypeError) as exc:
            raise CorpusFormatError(f"record {idx}: bad relation mention {exc}") from None
        if label in NO_RELATION:
            continue
        s = find_span(tokens, tokenize(subj))
        o = find_span(tokens, tokenize(obj))
        if s is None or o is None:
            counters["unlocated"] += 1
            return None
        ex.subjects.add(s)
        ex.objects.add(o)
        ex.relations.add(label)
    return ex


def _parse_canonical(idx: int, rec: dict, counters: dict) -> _RawExample:
    try:
        tokens = tuple(str(t) for t in rec["tokens"])
        subjects = {tuple(int(v) for v in s) for s in rec["subjects"]}
        objects = {tuple(int(v) for v in s) for s in rec["objects"]}
        relations = {str(r) for r in rec["relations"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusFormatError(f"record {idx}: {exc!r}") from None
    for s, e in subjects | objects:
        if not 0 <= s < e <= len(tokens):
            raise CorpusFormatError(f"record {idx}: span {(s, e)} outside sentence")
    return _RawExample(tokens, subjects, objects, relations)


def import_corpus(train: TextIO, validation: TextIO, test: TextIO,
                  format: str = "canonical-jsonl", name: str = "corpus") -> Dataset:
    """Parse three split streams into a ``Dataset``.

    Records whose entities cannot be found in the sentence, and sentences
    with no relation, are skipped and counted in ``Dataset.skipped``.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; choose from {FORMATS}")
    parse = _parse_copyre if format == "copyre-json" else _parse_canonical
    counters = {"unlocated": 0, "no_relation": 0}
    raw: dict[str, list[_RawExample]] = {}
    for split, stream in zip(SPLITS, (train, validation, test)):
        items = []
        for idx, rec in _read_records(stream):
            if not isinstance(rec, dict):
                raise CorpusFormatError(f"{split} record {idx}: not an object")
            try:
                ex = parse(idx, rec, counters)
            except CorpusFormatError as exc:
                raise CorpusFormatError(f"{split} {exc}") from None
            if ex is None:
                continue
            if not ex.relations or not ex.tokens:
                counters["no_relation"] += 1
                continue
            items.append(ex)
        raw[split] = items
    if counters["unlocated"]:
        log.warning("skipped %d records with entities not found in the sentence",
                    counters["unlocated"])

    vocab = tuple(sorted({r for items in raw.values() for ex in items for r in ex.relations}))
    return Dataset(vocab, {s: _binarize(raw[s], vocab) for s in SPLITS}, name, counters)


def _binarize(items: list[_RawExample], vocab: Sequence[str]) -> list[LabeledExample]:
    index = {r: i for i, r in enumerate(vocab)}
    out = []
    for ex in items:
        labels = np.zeros(len(vocab), dtype=np.int8)
        labels[[index[r] for r in ex.relations]] = 1
        out.append(LabeledExample(ex.tokens, tuple(sorted(ex.subjects)),
                                  tuple(sorted(ex.objects)), labels))
    return out


def import_files(train, validation, test, format="canonical-jsonl", name="corpus") -> Dataset:
    with open(train, encoding="utf-8") as a, open(validation, encoding="utf-8") as b, \
            open(test, encoding="utf-8") as c:
        return import_corpus(a, b, c, format=format, name=name)


def example_record(ex: LabeledExample, vocab: Sequence[str]) -> dict:
    return {"tokens": list(ex.tokens),
            "subjects": [list(s) for s in ex.subjects],
            "objects": [list(s) for s in ex.objects],
            "relations": ex.relations(vocab)}


def export_canonical(ds: Dataset, sink: TextIO, split: str | None = None) -> int:
    """Write canonical records; all splits in order unless ``split`` is given."""
    count = 0
    for s in ([split] if split else SPLITS):
        for ex in ds.splits.get(s, []):
            sink.write(json.dumps(example_record(ex, ds.relation_vocab),
                                  ensure_ascii=False) + "\n")
            count += 1
    return count


def relation_counts(examples: Iterable[LabeledExample]) -> list[int]:
    return [int(ex.labels.sum()) for ex in examples]


def _summary(counts: list[int]) -> dict:
    if not counts:
        return {"sentences": 0, "avg": 0.0, "stdev": 0.0, "three_plus": 0.0}
    return {"sentences": len(counts),
            "avg": statistics.fmean(counts),
            "stdev": statistics.pstdev(counts),
            "three_plus": sum(c >= 3 for c in counts) / len(counts)}


def dataset_stats(ds: Dataset) -> dict:
    """Positive-relation statistics over all splits combined and per split."""
    per_split = {s: _summary(relation_counts(ds.splits.get(s, []))) for s in SPLITS}
    combined = _summary([c for s in SPLITS for c in relation_counts(ds.splits.get(s, []))])
    return {"name": ds.name, "relations": ds.n_relations,
            "sizes": {s: per_split[s]["sentences"] for s in SPLITS},
            "total": combined["sentences"], "all": combined, "splits": per_split,
            "skipped": dict(ds.skipped)}


def format_stats(stats: dict) -> str:
    a = stats["all"]
    sizes = stats["sizes"]
    lines = [
        f"Dataset: {stats['name']}",
        f"Relations: {stats['relations']}",
        f"Training: {sizes['train']}",
        f"Validation: {sizes['validation']}",
        f"Testing: {sizes['test']}",
        f"Total: {stats['total']}",
        f"Avg. positive relations: {a['avg']:.2f}",
        f"Stdev.: {a['stdev']:.2f}",
        f"3+ Rels.: {100 * a['three_plus']:.2f}%",
        "Skipped records: " + ", ".join(f"{k}={v}" for k, v in sorted(stats["skipped"].items())),
    ]
    return "\n".join(lines)


def batch_iter(split: Sequence, batch_size: int = 32, seed: int = 0) -> list[list]:
    """Seeded shuffle followed by consecutive chunks; last partial batch kept."""
    if len(split) == 0:
        raise ValueError("cannot batch an empty split")
    order = np.random.default_rng(seed).permutation(len(split))
    return [[split[i] for i in order[k:k + batch_size]]
            for k in range(0, len(split), batch_size)]


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    if n == 0:
        raise ValueError("cannot batch an empty split")
    order = rng.permutation(n)
    return [order[k:k + batch_size] for k in range(0, n, batch_size)]
