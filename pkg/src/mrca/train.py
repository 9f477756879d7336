"""Adam with inverse-time decay, epoch loop, early stopping, multi-seed runs."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence, TextIO

import numpy as np

from . import loss as losses
from .data import Dataset, batch_indices
from .embedding import EmbeddingStore, encode_batch
from .evaluation import Aggregate, EvalReport, aggregate_runs, evaluate_model, micro_prf
from .network import (MRCAModel, ModelParams, NetworkShape, backward, forward,
                      init_params, predict)

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0015
    decay: float = 3e-5
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    dropout: float = 0.15
    seed: int = 0
    loss: str = "rc_dice"
    gamma: float = losses.DEFAULT_GAMMA
    reduction: str = "sample"
    hidden: int = 500
    seq_len: int = 100
    pool: int = 80
    stride: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "patience",
                     "hidden", "seq_len", "pool", "stride", "epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.loss not in losses.LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.seq_len < self.pool:
            raise ValueError("seq_len must be at least the pool size")

    @property
    def loss_config(self) -> losses.LossConfig:
        return losses.LossConfig(self.loss, self.gamma, self.reduction)

    def network_shape(self, embed_dim: int, n_relations: int) -> NetworkShape:
        return NetworkShape(embed_dim, self.hidden, self.seq_len, n_relations,
                            self.pool, self.stride, self.dropout,
                            "sigmoid" if self.loss == "bce_sigmoid" else "linear")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.tensors.items()},
                   {k: np.zeros_like(a) for k, a in params.tensors.items()})


def effective_lr(cfg: TrainConfig, t: int) -> float:
    return cfg.learning_rate / (1.0 + cfg.decay * t)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> tuple[ModelParams, AdamState]:
    """One in-place Adam update; the step size at step t is lr / (1 + decay*t)."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient {name}: shape {g.shape} != {params[name].shape}")
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in tensor {name!r}")
    state.t += 1
    t = state.t
    lr = effective_lr(cfg, t)
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        params.tensors[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
    return params, state


@dataclass
class EpochSummary:
    mean_loss: float
    n_batches: int
    elapsed_ms: float
    lr: float


def train_epoch(params: ModelParams, X: np.ndarray, Y: np.ndarray, cfg: TrainConfig,
                rng: np.random.Generator, state: AdamState) -> EpochSummary:
    """Shuffle, then forward -> batch loss -> backward -> Adam for every batch."""
    if len(X) == 0:
        raise ValueError("cannot train on an empty split")
    start = time.perf_counter()
    lcfg = cfg.loss_config
    total = 0.0
    batches = batch_indices(len(X), cfg.batch_size, rng)
    for idx in batches:
        scores, cache = forward(params, X[idx], training=True, rng=rng)
        value, dscores = losses.batch_loss(Y[idx], scores, lcfg)
        grads = backward(params, cache, dscores)
        adam_step(params, grads, state, cfg)
        total += value
    elapsed = 1000.0 * (time.perf_counter() - start)
    return EpochSummary(total / len(batches), len(batches), elapsed, effective_lr(cfg, state.t))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_precision: float
    val_recall: float
    val_f1: float
    lr: float
    elapsed_ms: float


@dataclass
class FitResult:
    params: ModelParams
    best_epoch: int
    best_f1: float
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def model(self) -> MRCAModel:
        return MRCAModel(self.params)


def _split_arrays(ds: Dataset, split: str, store: EmbeddingStore, seq_len: int):
    ex = ds.splits.get(split, [])
    return encode_batch(ex, store, seq_len), ds.label_matrix(split).astype(np.float64)


def fit(dataset: Dataset, store: EmbeddingStore, cfg: TrainConfig,
        params: ModelParams | None = None,
        callback: Callable[[EpochRecord], None] | None = None,
        validation_split: str = "validation") -> FitResult:
    """Train with early stopping on validation micro-F1.

    Returns the parameters from the best validation epoch, not the last.
    """
    if params is None:
        params = init_params(cfg.seed, cfg.network_shape(store.d, dataset.n_relations))
    shape = params.shape
    X, Y = _split_arrays(dataset, "train", store, shape.seq_len)
    Xv, Yv = _split_arrays(dataset, validation_split, store, shape.seq_len)
    if len(Xv) == 0:
        raise ValueError(f"split {validation_split!r} is empty; early stopping needs it")

    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState.zeros(params)
    model = MRCAModel(params)
    best = params.copy()
    best_f1, best_epoch, wait = -np.inf, 0, 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        summary = train_epoch(params, X, Y, cfg, rng, state)
        if not params.all_finite():
            raise NumericalError(f"parameters became non-finite in epoch {epoch}")
        scores = model.scores(Xv)
        rep = micro_prf(predict(scores, 0.5, shape.output), Yv)
        rec = EpochRecord(epoch, summary.mean_loss, rep.precision, rep.recall, rep.f1,
                          summary.lr, summary.elapsed_ms)
        history.append(rec)
        log.info("epoch %d loss %.6f val P %.4f R %.4f F1 %.4f", epoch,
                 rec.train_loss, rec.val_precision, rec.val_recall, rec.val_f1)
        if callback is not None:
            callback(rec)
        if rep.f1 > best_f1:
            best_f1, best_epoch, wait = rep.f1, epoch, 0
            best = params.copy()
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    return FitResult(best, best_epoch, float(best_f1), history)


@dataclass
class MultiRunResult:
    runs: list[FitResult]
    reports: list[EvalReport]
    aggregate: Aggregate


def multi_run(dataset: Dataset, store: EmbeddingStore, cfg: TrainConfig,
              n_runs: int = 5, eval_split: str = "test") -> MultiRunResult:
    """Repeat ``fit`` with seeds seed .. seed+n_runs-1 and score each best model."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    runs, reports = [], []
    Xt = encode_batch(dataset.splits[eval_split], store, cfg.seq_len)
    for k in range(n_runs):
        res = fit(dataset, store, replace(cfg, seed=cfg.seed + k))
        runs.append(res)
        reports.append(evaluate_model(res.model, dataset.splits[eval_split], encoded=Xt))
    return MultiRunResult(runs, reports, aggregate_runs(reports))


LOG_FIELDS = ("epoch", "train_loss", "val_precision", "val_recall", "val_f1", "lr", "elapsed_ms")


def write_metrics_log(history: Sequence[EpochRecord], sink: TextIO,
                      include_timing: bool = True) -> None:
    for rec in history:
        row = asdict(rec)
        if not include_timing:
            row["elapsed_ms"] = None
        sink.write(json.dumps({k: row[k] for k in LOG_FIELDS}) + "\n")


def read_metrics_log(source: TextIO) -> list[dict]:
    rows = []
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            if not isinstance(row, dict):
                raise ValueError("not an object")
            float(row["val_f1"])
            int(row["epoch"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"line {lineno}: malformed metrics record ({exc})") from None
        rows.append(row)
    return rows
