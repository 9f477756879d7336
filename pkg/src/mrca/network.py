"""Bidirectional LSTM -> temporal average pooling -> dropout -> linear head.

Everything operates on batches shaped ``(batch, seq_len, features)`` in
float64.  ``forward`` returns raw scores (no output squashing) together with
a cache that ``backward`` consumes to produce exact gradients.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .embedding import EncodedSentence

GATES = 4  # input, forget, cell candidate, output
DIRECTIONS = ("fw", "bw")
PARAM_NAMES = ("fw_W", "fw_U", "fw_b", "bw_W", "bw_U", "bw_b", "dense_W", "dense_b")


class ShapeError(ValueError):
    pass


def pooled_length(seq_len: int, pool: int, stride: int) -> int:
    if seq_len < pool:
        raise ShapeError(f"sequence length {seq_len} shorter than pool {pool}")
    return (seq_len - pool) // stride + 1


@dataclass(frozen=True)
class NetworkShape:
    embed_dim: int          # d; the LSTM input has d + 2 columns
    hidden: int = 500
    seq_len: int = 100
    n_relations: int = 24
    pool: int = 80
    stride: int = 2
    dropout: float = 0.15
    output: str = "linear"  # "linear" or "sigmoid" (BCE ablation)

    def __post_init__(self):
        for name in ("embed_dim", "hidden", "seq_len", "n_relations", "pool", "stride"):
            if getattr(self, name) <= 0:
                raise ShapeError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ShapeError("dropout must lie in [0, 1)")
        if self.output not in ("linear", "sigmoid"):
            raise ShapeError(f"unknown output activation {self.output!r}")
        pooled_length(self.seq_len, self.pool, self.stride)

    @property
    def input_dim(self) -> int:
        return self.embed_dim + 2

    @property
    def pooled_len(self) -> int:
        return pooled_length(self.seq_len, self.pool, self.stride)

    @property
    def flat_dim(self) -> int:
        return self.pooled_len * 2 * self.hidden

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        u, D = self.hidden, self.input_dim
        shapes = {}
        for dr in DIRECTIONS:
            shapes[f"{dr}_W"] = (D, GATES * u)
            shapes[f"{dr}_U"] = (u, GATES * u)
            shapes[f"{dr}_b"] = (GATES * u,)
        shapes["dense_W"] = (self.flat_dim, self.n_relations)
        shapes["dense_b"] = (self.n_relations,)
        return shapes

    def n_parameters(self) -> int:
        return int(sum(np.prod(s) for s in self.tensor_shapes().values()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    shape: NetworkShape
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.check()

    def check(self):
        expected = self.shape.tensor_shapes()
        if set(self.tensors) != set(expected):
            raise ShapeError(f"tensor names {sorted(self.tensors)} != {sorted(expected)}")
        for name, shp in expected.items():
            if self.tensors[name].shape != shp:
                raise ShapeError(f"{name}: shape {self.tensors[name].shape}, expected {shp}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.shape, {k: v.copy() for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors.values())


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(seed: int, shape: NetworkShape) -> ModelParams:
    """Glorot-uniform kernels, orthogonal recurrent kernels, zero biases."""
    rng = np.random.default_rng(seed)
    u, D = shape.hidden, shape.input_dim
    tensors = {}
    for dr in DIRECTIONS:
        tensors[f"{dr}_W"] = _glorot(rng, D, GATES * u)
        tensors[f"{dr}_U"] = _orthogonal(rng, u, GATES * u)
        tensors[f"{dr}_b"] = np.zeros(GATES * u)
    tensors["dense_W"] = _glorot(rng, shape.flat_dim, shape.n_relations)
    tensors["dense_b"] = np.zeros(shape.n_relations)
    return ModelParams(shape, tensors)


def zeros_like_params(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LSTMCache:
    x: np.ndarray       # (B, L, D) in processing order
    gates: np.ndarray   # (B, L, 4u) post-activation i, f, g, o
    c: np.ndarray       # (B, L + 1, u); c[:, 0] is the zero initial state
    h: np.ndarray       # (B, L + 1, u)
    tanh_c: np.ndarray  # (B, L, u)


def _as_batch(x) -> np.ndarray:
    if isinstance(x, EncodedSentence):
        x = x.matrix
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    return x


def lstm_forward(params: ModelParams, x, direction: str = "fw"):
    """Run one LSTM direction; returns hidden states (B, L, u) and a cache.

    The backward direction reads the sequence reversed and its outputs are
    flipped back so row ``t`` always lines up with input token ``t``.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    x = _as_batch(x)
    shape = params.shape
    if x.shape[2] != shape.input_dim:
        raise ShapeError(f"input has {x.shape[2]} features, model expects {shape.input_dim}")
    W, U, b = params[f"{direction}_W"], params[f"{direction}_U"], params[f"{direction}_b"]
    if direction == "bw":
        x = x[:, ::-1]
    B, L, _ = x.shape
    u = shape.hidden

    # input projections for every timestep in one matmul
    xw = x @ W + b
    gates = np.empty((B, L, GATES * u))
    c = np.zeros((B, L + 1, u))
    h = np.zeros((B, L + 1, u))
    tanh_c = np.empty((B, L, u))
    for t in range(L):
        z = xw[:, t] + h[:, t] @ U
        g = gates[:, t]
        g[:, :2 * u] = _sigmoid(z[:, :2 * u])
        g[:, 2 * u:3 * u] = np.tanh(z[:, 2 * u:3 * u])
        g[:, 3 * u:] = _sigmoid(z[:, 3 * u:])
        c[:, t + 1] = g[:, u:2 * u] * c[:, t] + g[:, :u] * g[:, 2 * u:3 * u]
        tanh_c[:, t] = np.tanh(c[:, t + 1])
        h[:, t + 1] = g[:, 3 * u:] * tanh_c[:, t]

    out = h[:, 1:]
    if direction == "bw":
        out = out[:, ::-1]
    return out, LSTMCache(x, gates, c, h, tanh_c)


def lstm_backward(params: ModelParams, cache: LSTMCache, dout: np.ndarray,
                  direction: str = "fw") -> dict[str, np.ndarray]:
    """Backpropagation through time for one direction."""
    U = params[f"{direction}_U"]
    u = params.shape.hidden
    if direction == "bw":
        dout = dout[:, ::-1]
    B, L, _ = dout.shape
    dz_all = np.empty((B, L, GATES * u))
    dh_next = np.zeros((B, u))
    dc_next = np.zeros((B, u))
    g_all = cache.gates
    for t in range(L - 1, -1, -1):
        g = g_all[:, t]
        i, f, gg, o = g[:, :u], g[:, u:2 * u], g[:, 2 * u:3 * u], g[:, 3 * u:]
        tc = cache.tanh_c[:, t]
        dh = dout[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :u] = dc * gg * i * (1.0 - i)
        dz[:, u:2 * u] = dc * cache.c[:, t] * f * (1.0 - f)
        dz[:, 2 * u:3 * u] = dc * i * (1.0 - gg * gg)
        dz[:, 3 * u:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ U.T

    D = cache.x.shape[2]
    dz_flat = dz_all.reshape(B * L, GATES * u)
    return {
        f"{direction}_W": cache.x.reshape(B * L, D).T @ dz_flat,
        f"{direction}_U": cache.h[:, :-1].reshape(B * L, u).T @ dz_flat,
        f"{direction}_b": dz_flat.sum(axis=0),
    }


def avg_pool(H: np.ndarray, pool: int, stride: int) -> np.ndarray:
    """Average over windows of consecutive timesteps (axis -2), no padding."""
    H = np.asarray(H, dtype=np.float64)
    L = H.shape[-2]
    n = pooled_length(L, pool, stride)
    csum = np.cumsum(H, axis=-2)
    zero = np.zeros(H.shape[:-2] + (1, H.shape[-1]))
    csum = np.concatenate([zero, csum], axis=-2)
    starts = np.arange(n) * stride
    return (csum[..., starts + pool, :] - csum[..., starts, :]) / pool


def avg_pool_backward(dP: np.ndarray, seq_len: int, pool: int, stride: int) -> np.ndarray:
    dH = np.zeros(dP.shape[:-2] + (seq_len, dP.shape[-1]))
    for i in range(dP.shape[-2]):
        dH[..., i * stride:i * stride + pool, :] += dP[..., i:i + 1, :] / pool
    return dH


@dataclass
class ForwardCache:
    shape: NetworkShape
    lstm: dict[str, LSTMCache]
    hidden: np.ndarray    # (B, L, 2u)
    pooled: np.ndarray    # (B, L', 2u)
    mask: np.ndarray | None
    features: np.ndarray  # flattened, post-dropout (B, L'·2u)
    scores: np.ndarray    # (B, |P|)


def forward(params: ModelParams, x, training: bool = False,
            rng: np.random.Generator | None = None):
    """Scores (B, |P|) and cache.  Dropout only applies when ``training``."""
    shape = params.shape
    x = _as_batch(x)
    if x.shape[1:] != (shape.seq_len, shape.input_dim):
        raise ShapeError(f"input shape {x.shape[1:]} != {(shape.seq_len, shape.input_dim)}")
    h_fw, c_fw = lstm_forward(params, x, "fw")
    h_bw, c_bw = lstm_forward(params, x, "bw")
    H = np.concatenate([h_fw, h_bw], axis=2)
    pooled = avg_pool(H, shape.pool, shape.stride)
    feats = pooled.reshape(len(x), -1)
    mask = None
    if training and shape.dropout > 0:
        if rng is None:
            raise ValueError("training forward pass needs an rng for dropout")
        keep = 1.0 - shape.dropout
        mask = (rng.random(feats.shape) < keep) / keep
        feats = feats * mask
    scores = feats @ params["dense_W"] + params["dense_b"]
    cache = ForwardCache(shape, {"fw": c_fw, "bw": c_bw}, H, pooled, mask, feats, scores)
    return scores, cache


def backward(params: ModelParams, cache: ForwardCache, dscores) -> dict[str, np.ndarray]:
    """Gradients of ``sum(scores * dscores)`` w.r.t. every parameter tensor."""
    shape = params.shape
    if cache.shape != shape:
        raise ShapeError("cache was produced by a model with a different shape")
    dscores = np.asarray(dscores, dtype=np.float64)
    if dscores.ndim == 1:
        dscores = dscores[None]
    if dscores.shape != cache.scores.shape:
        raise ShapeError(f"dscores shape {dscores.shape} != scores shape {cache.scores.shape}")

    grads = {
        "dense_W": cache.features.T @ dscores,
        "dense_b": dscores.sum(axis=0),
    }
    dfeat = dscores @ params["dense_W"].T
    if cache.mask is not None:
        dfeat = dfeat * cache.mask
    dpooled = dfeat.reshape(cache.pooled.shape)
    dH = avg_pool_backward(dpooled, shape.seq_len, shape.pool, shape.stride)
    u = shape.hidden
    grads.update(lstm_backward(params, cache.lstm["fw"], dH[:, :, :u], "fw"))
    grads.update(lstm_backward(params, cache.lstm["bw"], dH[:, :, u:], "bw"))
    return grads


def output_activation(scores: np.ndarray, output: str = "linear") -> np.ndarray:
    if output == "sigmoid":
        return _sigmoid(scores)
    return scores


def predict(scores, threshold: float = 0.5, output: str = "linear") -> np.ndarray:
    """Binary labels: 1 where the (activated) score reaches ``threshold``."""
    values = output_activation(np.asarray(scores, dtype=np.float64), output)
    return (values >= threshold).astype(np.int8)


class MRCAModel:
    """Parameters plus inference helpers."""

    def __init__(self, params: ModelParams):
        self.params = params

    @property
    def shape(self) -> NetworkShape:
        return self.params.shape

    def scores(self, x, batch_size: int = 256) -> np.ndarray:
        x = _as_batch(x)
        out = [forward(self.params, x[i:i + batch_size])[0]
               for i in range(0, len(x), batch_size)]
        if not out:
            return np.zeros((0, self.shape.n_relations))
        return np.concatenate(out)

    def predict(self, x, threshold: float = 0.5) -> np.ndarray:
        return predict(self.scores(x), threshold, self.shape.output)
