"""Micro-averaged precision / recall / F1 and multi-run aggregation."""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .embedding import EmbeddingStore, encode_batch
from .network import predict

METRICS = ("precision", "recall", "f1")


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    n_examples: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.tp + other.tp, self.fp + other.fp,
                          self.fn + other.fn, self.n_examples + other.n_examples)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec.update(precision=self.precision, recall=self.recall, f1=self.f1)
        return rec

    def to_table(self) -> str:
        return "\n".join([
            f"{'examples':<10} {self.n_examples}",
            f"{'tp/fp/fn':<10} {self.tp}/{self.fp}/{self.fn}",
            f"{'precision':<10} {100 * self.precision:6.2f}",
            f"{'recall':<10} {100 * self.recall:6.2f}",
            f"{'f1':<10} {100 * self.f1:6.2f}",
        ])


def micro_prf(predictions, gold) -> EvalReport:
    pred = np.asarray(predictions).astype(bool)
    gold = np.asarray(gold).astype(bool)
    if pred.shape != gold.shape:
        raise ValueError(f"prediction shape {pred.shape} != gold shape {gold.shape}")
    tp = int(np.sum(pred & gold))
    fp = int(np.sum(pred & ~gold))
    fn = int(np.sum(~pred & gold))
    n = pred.shape[0] if pred.ndim else 1
    return EvalReport(tp, fp, fn, n)


def evaluate_model(model, split: Sequence, store: EmbeddingStore | None = None,
                   threshold: float = 0.5, encoded: np.ndarray | None = None) -> EvalReport:
    """Encode ``split``, score it in inference mode and threshold.

    ``model`` needs a ``scores(x)`` method and a ``shape`` with ``seq_len``
    and ``output``; pass ``encoded`` to skip re-encoding.
    """
    if encoded is None:
        if store is None:
            raise ValueError("need an embedding store or a pre-encoded split")
        encoded = encode_batch(split, store, model.shape.seq_len)
    gold = np.stack([ex.labels for ex in split]) if len(split) else \
        np.zeros((0, model.shape.n_relations))
    scores = model.scores(encoded)
    return micro_prf(predict(scores, threshold, model.shape.output), gold)


@dataclass(frozen=True)
class Aggregate:
    mean: dict[str, float]
    stdev: dict[str, float]
    n_runs: int

    def formatted(self, metric: str = "f1") -> str:
        """``mean_{stdev}`` in percent, as in results tables."""
        return f"{100 * self.mean[metric]:.2f}_{{{100 * self.stdev[metric]:.2f}}}"

    def to_record(self) -> dict:
        return {"n_runs": self.n_runs, "mean": dict(self.mean), "stdev": dict(self.stdev)}


def aggregate_runs(reports: Sequence[EvalReport]) -> Aggregate:
    """Mean and sample standard deviation (0 for a single run)."""
    if not reports:
        raise ValueError("no reports to aggregate")
    mean, stdev = {}, {}
    for m in METRICS:
        vals = [getattr(r, m) for r in reports]
        mean[m] = statistics.fmean(vals)
        stdev[m] = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return Aggregate(mean, stdev, len(reports))
