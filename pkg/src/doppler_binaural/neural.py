"""Per-frame conditioned warp model with hand-written forward and backward passes.

A small MLP maps each condition frame to two warp corrections and two
log-gains (one per ear). The frame outputs are linearly upsampled to the
audio rate and applied on top of the geometric warpfield:

    out_e(n) = g_e(n) * interp(mono, rho_geo_e(n) + shift_e(n))

with ``shift = max_shift * tanh(h[0:2])`` and ``g = exp(clip(h[2:4], -2, 2))``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .conditioning import ConditionStats, ConditionTrack
from .errors import ConsistencyError, DimensionError, LoadError, ShapeError, ValidationError

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
OUT_DIM = 4
HIDDEN = 64
MAX_SHIFT = 96.0
LOG_GAIN_LIMIT = 2.0
WARMUP = 4000
FORMAT_MAGIC = b"DBWM"
FORMAT_VERSION = 1


@dataclass(eq=False)
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    max_shift: float = MAX_SHIFT
    variant: str | None = None
    stats: ConditionStats | None = None

    def __post_init__(self):
        for name in PARAM_NAMES:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"parameter {name} is not finite")
            setattr(self, name, arr)
        h = self.W1.shape[0]
        if (
            self.b1.shape != (h,)
            or self.W2.shape != (h, h)
            or self.b2.shape != (h,)
            or self.W3.shape != (OUT_DIM, h)
            or self.b3.shape != (OUT_DIM,)
        ):
            raise DimensionError("parameter shapes are inconsistent")
        if not self.max_shift > 0:
            raise ValidationError("max_shift must be positive")
        if self.stats is not None and len(self.stats.mean) != self.in_dim:
            raise DimensionError("normalisation statistics do not match the input dimension")

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_NAMES]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec: np.ndarray) -> "ModelParams":
        out, i = {}, 0
        for name, arr in zip(PARAM_NAMES, self.arrays()):
            out[name] = np.asarray(vec[i : i + arr.size], dtype=np.float64).reshape(arr.shape).copy()
            i += arr.size
        if i != len(vec):
            raise DimensionError(f"vector of length {len(vec)} does not match {i} parameters")
        return replace(self, **out)

    def fingerprint(self) -> str:
        h = hashlib.sha1(struct.pack("<d", self.max_shift))
        for a in self.arrays():
            h.update(a.tobytes())
        return h.hexdigest()

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


def init_params(in_dim: int, seed: int = 0, hidden: int = HIDDEN, max_shift: float = MAX_SHIFT) -> ModelParams:
    """Glorot-uniform hidden layers and a zero output layer, so a fresh model
    is exactly the geometric warp with unit gain."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))

    def glorot(fan_out, fan_in):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_out, fan_in))

    return ModelParams(
        W1=glorot(hidden, in_dim),
        b1=np.zeros(hidden),
        W2=glorot(hidden, hidden),
        b2=np.zeros(hidden),
        W3=np.zeros((OUT_DIM, hidden)),
        b3=np.zeros(OUT_DIM),
        max_shift=max_shift,
    )


# -- forward / backward -------------------------------------------------------

@dataclass(eq=False)
class ForwardCache:
    fingerprint: str
    x: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    h: np.ndarray
    shift_tanh: np.ndarray
    gains: np.ndarray
    frame_index: np.ndarray
    frame_weight: np.ndarray
    up_gain: np.ndarray
    interp: np.ndarray
    slope: np.ndarray
    free: np.ndarray
    span: tuple[int, int]
    extras: dict = field(default_factory=dict)


def frame_coordinates(span, n_frames, rate, t0, sample_rate):
    """Left frame index and interpolation weight for every audio sample in ``span``."""
    n = np.arange(span[0], span[1], dtype=float)
    u = (n / sample_rate - t0) * rate
    k = np.clip(np.floor(u).astype(np.int64), 0, n_frames - 2)
    w = np.clip(u - k, 0.0, 1.0)
    return k, w


def _upsample(values, k, w):
    return values[k] * (1.0 - w)[:, None] + values[k + 1] * w[:, None]


def _downsample_grad(grad, k, w, n_frames):
    out = np.empty((n_frames, grad.shape[1]))
    for c in range(grad.shape[1]):
        out[:, c] = np.bincount(k, grad[:, c] * (1.0 - w), n_frames) + np.bincount(k + 1, grad[:, c] * w, n_frames)
    return out


def forward(mono, condition: ConditionTrack, geo, params: ModelParams, span=None, sample_rate: int = 48000):
    """Render both ears for output samples ``span = (start, stop)``.

    ``geo`` is a pair of per-ear warpfields (or arrays of read positions)
    covering the full output length. Returns ``(binaural (2, L), cache)``.
    """
    x = np.asarray(mono, dtype=float)
    geo = np.stack([np.asarray(getattr(g, "positions", g), dtype=float) for g in geo])
    if condition.channels != params.in_dim:
        raise ShapeError(f"condition has {condition.channels} channels, model expects {params.in_dim}")
    if len(condition) < 2:
        raise ShapeError("condition track needs at least two frames")
    if span is None:
        span = (0, geo.shape[1])
    start, stop = span

    feats = condition.values
    a1 = np.tanh(feats @ params.W1.T + params.b1)
    a2 = np.tanh(a1 @ params.W2.T + params.b2)
    h = a2 @ params.W3.T + params.b3
    shift_tanh = np.tanh(h[:, 0:2])
    gains = np.exp(np.clip(h[:, 2:4], -LOG_GAIN_LIMIT, LOG_GAIN_LIMIT))

    k, w = frame_coordinates(span, len(condition), condition.rate, condition.t0, sample_rate)
    up = _upsample(np.hstack([params.max_shift * shift_tanh, gains]), k, w)
    n = np.arange(start, stop, dtype=float)
    rho = geo[:, start:stop] + up[:, 0:2].T
    free = rho <= n
    rho = np.minimum(rho, n)

    i0 = np.floor(rho).astype(np.int64)
    frac = rho - i0
    valid0 = (i0 >= 0) & (i0 < len(x))
    valid1 = (i0 + 1 >= 0) & (i0 + 1 < len(x))
    x0 = np.where(valid0, x[np.clip(i0, 0, len(x) - 1)], 0.0)
    x1 = np.where(valid1, x[np.clip(i0 + 1, 0, len(x) - 1)], 0.0)
    s = (1.0 - frac) * x0 + frac * x1
    up_gain = up[:, 2:4].T
    out = up_gain * s
    cache = ForwardCache(
        params.fingerprint(), feats, a1, a2, h, shift_tanh, gains, k, w, up_gain, s, x1 - x0, free, (start, stop)
    )
    return out, cache


def loss_and_grad(pred, target, warmup: int = WARMUP):
    """Waveform MSE over both channels, skipping the first ``warmup`` samples."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.shape[-1] <= warmup:
        raise ShapeError(f"signal of length {pred.shape[-1]} does not exceed the {warmup}-sample warm-up")
    diff = pred[..., warmup:] - target[..., warmup:]
    grad = np.zeros_like(pred)
    grad[..., warmup:] = 2.0 * diff / diff.size
    return float(np.mean(diff**2)), grad


def loss(pred, target, warmup: int = WARMUP) -> float:
    return loss_and_grad(pred, target, warmup)[0]


def backward(cache: ForwardCache, params: ModelParams, grad_out) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every parameter array, given dL/d(output)."""
    if cache.fingerprint != params.fingerprint():
        raise ConsistencyError("cache was produced with different parameters")
    grad_out = np.asarray(grad_out, dtype=float)
    if grad_out.shape != cache.interp.shape:
        raise ShapeError(f"output gradient shape {grad_out.shape} != {cache.interp.shape}")

    d_gain = grad_out * cache.interp
    d_rho = grad_out * cache.up_gain * cache.slope * cache.free
    d_frames = _downsample_grad(np.vstack([d_rho, d_gain]).T, cache.frame_index, cache.frame_weight, len(cache.x))

    h = cache.h
    dh = np.empty_like(h)
    dh[:, 0:2] = d_frames[:, 0:2] * params.max_shift * (1.0 - cache.shift_tanh**2)
    inside = (h[:, 2:4] > -LOG_GAIN_LIMIT) & (h[:, 2:4] < LOG_GAIN_LIMIT)
    dh[:, 2:4] = d_frames[:, 2:4] * cache.gains * inside

    grads = {"W3": dh.T @ cache.a2, "b3": dh.sum(axis=0)}
    dz2 = (dh @ params.W3) * (1.0 - cache.a2**2)
    grads["W2"] = dz2.T @ cache.a1
    grads["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ params.W2) * (1.0 - cache.a1**2)
    grads["W1"] = dz1.T @ cache.x
    grads["b1"] = dz1.sum(axis=0)
    return grads


def flatten_grads(grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[name].ravel() for name in PARAM_NAMES])


@dataclass(eq=False)
class Example:
    """One training item: the mono input, its normalised condition track,
    per-ear geometric read positions (2, N) and the binaural target (2, N)."""

    id: str
    mono: np.ndarray
    condition: ConditionTrack
    geo: np.ndarray
    target: np.ndarray
    sample_rate: int = 48000


def batch_loss_and_grad(batch, params: ModelParams, warmup: int = WARMUP):
    """Summed loss and gradient over ``[(example, span), ...]``."""
    total = 0.0
    grad = np.zeros(params.size)
    losses = []
    for ex, span in batch:
        pred, cache = forward(ex.mono, ex.condition, ex.geo, params, span, ex.sample_rate)
        value, g_out = loss_and_grad(pred, ex.target[:, span[0] : span[1]], warmup)
        losses.append(value)
        total += value
        grad += flatten_grads(backward(cache, params, g_out))
    return total, grad, losses


class Adam:
    """Adaptive-moment optimiser over a flat parameter vector."""

    def __init__(self, size: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- persistence ----------------------------------------------------------------

def save_params(params: ModelParams, path) -> None:
    meta = {
        "in_dim": params.in_dim,
        "hidden": params.hidden,
        "out_dim": OUT_DIM,
        "max_shift": params.max_shift,
        "variant": params.variant,
        "channel_names": list(params.stats.channel_names) if params.stats is not None else None,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    arrays = params.arrays()
    if params.stats is not None:
        arrays = arrays + [params.stats.mean, params.stats.scale]
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(path, expected_in_dim: int | None = None) -> ModelParams:
    path = Path(path)
    data = path.read_bytes()
    head = len(FORMAT_MAGIC) + 8
    if len(data) < head or data[: len(FORMAT_MAGIC)] != FORMAT_MAGIC:
        raise LoadError(f"{path}: not a model file")
    version, meta_len = struct.unpack("<II", data[len(FORMAT_MAGIC) : head])
    if version != FORMAT_VERSION:
        raise LoadError(f"{path}: unsupported format version {version}")
    try:
        meta = json.loads(data[head : head + meta_len])
    except ValueError as exc:
        raise LoadError(f"{path}: corrupt header ({exc})") from None
    d, hdim = meta["in_dim"], meta["hidden"]
    if meta.get("out_dim") != OUT_DIM:
        raise DimensionError(f"{path}: output dimension {meta.get('out_dim')} != {OUT_DIM}")
    shapes = [(hdim, d), (hdim,), (hdim, hdim), (hdim,), (OUT_DIM, hdim), (OUT_DIM,)]
    if meta.get("channel_names") is not None:
        shapes += [(d,), (d,)]
    need = sum(int(np.prod(s)) for s in shapes) * 8
    body = data[head + meta_len :]
    if len(body) != need:
        raise LoadError(f"{path}: expected {need} bytes of parameters, found {len(body)}")
    arrays, offset = [], 0
    for s in shapes:
        count = int(np.prod(s))
        arrays.append(np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(s).copy())
        offset += count * 8
    stats = None
    if meta.get("channel_names") is not None:
        stats = ConditionStats(arrays[6], arrays[7], tuple(meta["channel_names"]))
    if expected_in_dim is not None and d != expected_in_dim:
        raise DimensionError(f"{path}: model expects {d} condition channels, run provides {expected_in_dim}")
    return ModelParams(*arrays[:6], max_shift=meta["max_shift"], variant=meta.get("variant"), stats=stats)
