"""Dice loss, its relation-classification extension, and sigmoid BCE.

The per-element functions accept scalars or arrays.  ``rc_dice_loss``
replaces the Dice value for correctly-negative predictions (label 0, score
below 0.5) with ``gamma**2 / (p**2 + y**2 + gamma)``, which is at most
``gamma``.  At exactly ``p == 0.5`` the ordinary Dice branch applies.

Batch reductions:

``sample`` (default for the Dice losses)
    One Dice ratio per sample over its relation vector, taken across the
    cells outside the suppressed branch, plus the suppressed cells' small
    terms; averaged over samples.  With a single relation this is exactly
    the per-element loss.
``mean`` / ``sum``
    Per-element losses averaged or summed over every (sample, relation)
    cell.  With ``gamma = 1e-6`` a negative cell scoring >= 0.5 then has
    loss ~1 but gradient ~2*gamma/p**3, so negatives are barely trained.

Sigmoid BCE always uses the per-cell mean unless ``sum`` is requested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_GAMMA = 1e-6
BCE_EPS = 1e-12
NEGATIVE_BOUNDARY = 0.5
LOSSES = ("rc_dice", "dice", "bce_sigmoid")
REDUCTIONS = ("sample", "mean", "sum")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "rc_dice"
    gamma: float = DEFAULT_GAMMA
    reduction: str = "sample"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}; choose from {LOSSES}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")


def dice_loss(y, p, gamma: float = DEFAULT_GAMMA):
    return 1.0 - (2.0 * p * y + gamma) / (p * p + y * y + gamma)


def dice_grad(y, p, gamma: float = DEFAULT_GAMMA):
    """d dice_loss / dp."""
    den = p * p + y * y + gamma
    num = 2.0 * p * y + gamma
    return -(2.0 * y * den - num * 2.0 * p) / (den * den)


def _suppressed(y, p):
    return (np.asarray(y) == 0) & (np.asarray(p) < NEGATIVE_BOUNDARY)


def rc_dice_loss(y, p, gamma: float = DEFAULT_GAMMA):
    small = gamma ** 2 / (p * p + y * y + gamma)
    out = np.where(_suppressed(y, p), small, dice_loss(y, p, gamma))
    return out if np.ndim(out) else float(out)


def rc_dice_grad(y, p, gamma: float = DEFAULT_GAMMA):
    """d rc_dice_loss / dp, piecewise; y is 0 on the suppressed branch."""
    den = p * p + y * y + gamma
    small = -2.0 * p * gamma ** 2 / (den * den)
    out = np.where(_suppressed(y, p), small, dice_grad(y, p, gamma))
    return out if np.ndim(out) else float(out)


def bce_loss(y, q, eps: float = BCE_EPS):
    q = np.clip(q, eps, 1.0 - eps)
    out = -(y * np.log(q) + (1.0 - y) * np.log1p(-q))
    return out if np.ndim(out) else float(out)


def bce_grad(y, q, eps: float = BCE_EPS):
    """d bce_loss / dq (zero where q was clamped)."""
    q = np.asarray(q, dtype=np.float64)
    qc = np.clip(q, eps, 1.0 - eps)
    g = -(y / qc) + (1.0 - y) / (1.0 - qc)
    g = np.where((q < eps) | (q > 1.0 - eps), 0.0, g)
    return g if np.ndim(g) else float(g)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def elementwise(Y: np.ndarray, S: np.ndarray, cfg: LossConfig):
    """Per-cell loss values and d loss / d score for raw scores ``S``."""
    if cfg.kind == "rc_dice":
        return rc_dice_loss(Y, S, cfg.gamma), rc_dice_grad(Y, S, cfg.gamma)
    if cfg.kind == "dice":
        return dice_loss(Y, S, cfg.gamma), dice_grad(Y, S, cfg.gamma)
    q = _sigmoid(S)
    vals = bce_loss(Y, q)
    # d/ds of BCE(sigmoid(s)); the clamp is only active when q is saturated
    grads = np.where((q < BCE_EPS) | (q > 1.0 - BCE_EPS), 0.0, q - Y)
    return vals, grads


def sample_dice(Y: np.ndarray, S: np.ndarray, gamma: float, rc: bool = True):
    """Per-sample Dice over the relation vector; returns (losses, grads).

    ``Y`` and ``S`` are (batch, |P|).  With ``rc`` the suppressed cells
    (label 0, score < 0.5) leave the ratio and contribute
    ``gamma**2 / (p**2 + gamma)`` each instead.
    """
    sup = _suppressed(Y, S) if rc else np.zeros(Y.shape, dtype=bool)
    keep = ~sup
    num = 2.0 * np.sum(S * Y * keep, axis=1) + gamma
    den = np.sum((S * S + Y * Y) * keep, axis=1) + gamma
    small = np.where(sup, gamma ** 2 / (S * S + Y * Y + gamma), 0.0)
    losses = 1.0 - num / den + small.sum(axis=1)
    num, den = num[:, None], den[:, None]
    g_main = -(2.0 * Y * den - num * 2.0 * S) / (den * den)
    g_small = -2.0 * S * gamma ** 2 / (S * S + Y * Y + gamma) ** 2
    return losses, np.where(sup, g_small, g_main)


def batch_loss(Y, S, cfg: LossConfig = LossConfig()):
    """Reduced loss over a batch and its gradient w.r.t. the score matrix."""
    Y = np.asarray(Y, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if Y.shape != S.shape:
        raise ValueError(f"label shape {Y.shape} != score shape {S.shape}")
    if cfg.reduction == "sample" and cfg.kind != "bce_sigmoid":
        shape = S.shape
        vals, grads = sample_dice(Y.reshape(-1, shape[-1]), S.reshape(-1, shape[-1]),
                                  cfg.gamma, rc=cfg.kind == "rc_dice")
        n = max(len(vals), 1)
        return float(vals.sum() / n), grads.reshape(shape) / n
    vals, grads = elementwise(Y, S, cfg)
    vals = np.asarray(vals)
    grads = np.asarray(grads)
    if cfg.reduction in ("mean", "sample"):
        n = max(Y.size, 1)
        return float(vals.sum() / n), grads / n
    return float(vals.sum()), grads


# (y, p) pairs analysed in the loss comparison table
TABLE_ROWS = ((0, 1.0), (0, 0.1), (0, -0.1), (0, -1.0), (1, 1.0), (1, 0.0), (1, -1.0))


def loss_table(gamma: float = DEFAULT_GAMMA):
    rows = []
    for y, p in TABLE_ROWS:
        rows.append({"y": y, "p": p,
                     "dice": float(dice_loss(y, p, gamma)),
                     "rc_dice": float(rc_dice_loss(y, p, gamma))})
    return rows
