"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

import numpy as np

from . import loss as losses
from .network import NetworkShape, backward, forward, init_params

STEP = 1e-4
# Dice curves on a scale of sqrt(gamma) = 1e-3 near p = 0, so loss-level
# checks need a much finer step than the network check.
LOSS_STEP = 1e-6
ABS_FLOOR = 1e-7
BOUNDARY_MARGIN = 1e-3


def relative_error(analytic, numeric, floor: float = ABS_FLOOR) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|); 0 where |a - n| <= floor."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.where(diff <= floor, 0.0, diff / scale)
    return err


def _central(f, x: float, h: float = STEP) -> float:
    return (f(x + h) - f(x - h)) / (2 * h)


def _safe_points(rng, n, lo=-1.0, hi=1.0):
    p = rng.uniform(lo, hi, size=n)
    return p[np.abs(p - losses.NEGATIVE_BOUNDARY) > BOUNDARY_MARGIN + STEP]


def check_losses(seed: int = 0, n: int = 50) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    g = losses.DEFAULT_GAMMA
    out = {}
    p = _safe_points(rng, n)
    for name, fn, grad in (("dice", losses.dice_loss, losses.dice_grad),
                           ("rc_dice", losses.rc_dice_loss, losses.rc_dice_grad)):
        worst = 0.0
        for y in (0, 1):
            for x in p:
                num = _central(lambda t: fn(y, t, g), x, h=LOSS_STEP)
                worst = max(worst, float(relative_error(grad(y, x, g), num)))
        out[f"loss.{name}"] = worst
    q = rng.uniform(0.01, 0.99, size=n)
    worst = 0.0
    for y in (0, 1):
        for x in q:
            num = _central(lambda t: losses.bce_loss(y, t), x, h=LOSS_STEP)
            worst = max(worst, float(relative_error(losses.bce_grad(y, x), num)))
    out["loss.bce"] = worst
    return out


def check_batch_loss(seed: int = 0, batch: int = 3, n_relations: int = 4) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    Y = (rng.random((batch, n_relations)) < 0.4).astype(float)
    S = rng.uniform(-1.2, 1.2, size=Y.shape)
    S = np.where(np.abs(S - 0.5) < BOUNDARY_MARGIN + LOSS_STEP, S + 0.1, S)
    out = {}
    for kind in losses.LOSSES:
        for red in losses.REDUCTIONS:
            cfg = losses.LossConfig(kind, reduction=red)
            _, G = losses.batch_loss(Y, S, cfg)
            num = np.zeros_like(S)
            for idx in np.ndindex(S.shape):
                old = S[idx]
                S[idx] = old + LOSS_STEP
                a, _ = losses.batch_loss(Y, S, cfg)
                S[idx] = old - LOSS_STEP
                b, _ = losses.batch_loss(Y, S, cfg)
                S[idx] = old
                num[idx] = (a - b) / (2 * LOSS_STEP)
            out[f"batch.{kind}.{red}"] = float(relative_error(G, num).max())
    return out


def check_network(seed: int = 0, hidden: int = 3, seq_len: int = 5, n_relations: int = 3,
                  embed_dim: int = 3, batch: int = 2, corrupt: bool = False) -> dict[str, float]:
    """Compare ``backward`` against finite differences of sum(scores * w).

    Runs in training mode with a fixed dropout mask so mask handling is
    covered too.  ``corrupt`` perturbs one analytic entry (negative control).
    """
    rng = np.random.default_rng(seed)
    pool = max(1, seq_len // 2)
    shape = NetworkShape(embed_dim, hidden, seq_len, n_relations, pool, 1, dropout=0.2)
    params = init_params(seed, shape)
    for t in params.tensors.values():
        t += rng.normal(0.0, 0.3, size=t.shape)
    x = rng.normal(0.0, 1.0, size=(batch, seq_len, shape.input_dim))
    w = rng.normal(0.0, 1.0, size=(batch, n_relations))

    def objective():
        s, _ = forward(params, x, training=True, rng=np.random.default_rng(seed + 1))
        return float(np.sum(s * w))

    _, cache = forward(params, x, training=True, rng=np.random.default_rng(seed + 1))
    grads = backward(params, cache, w)
    if corrupt:
        grads["fw_U"] = grads["fw_U"].copy()
        grads["fw_U"].flat[0] += 1e-2 + abs(grads["fw_U"].flat[0])
    out = {}
    for name, tensor in params.tensors.items():
        num = np.zeros_like(tensor)
        for idx in np.ndindex(tensor.shape):
            old = tensor[idx]
            tensor[idx] = old + STEP
            a = objective()
            tensor[idx] = old - STEP
            b = objective()
            tensor[idx] = old
            num[idx] = (a - b) / (2 * STEP)
        out[f"net.{name}"] = float(relative_error(grads[name], num).max())
    return out


def run_gradcheck(seed: int = 0, hidden: int = 3, seq_len: int = 5, n_relations: int = 3,
                  embed_dim: int = 3, corrupt: bool = False) -> dict[str, float]:
    result = check_losses(seed)
    result.update(check_batch_loss(seed))
    result.update(check_network(seed, hidden, seq_len, n_relations, embed_dim,
                                corrupt=corrupt))
    return result
