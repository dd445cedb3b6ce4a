"""Waveform, STFT amplitude/phase and multi-resolution spectral metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .audio import AudioBuffer, read_wav
from .errors import ShapeError, UndefinedMetricError, ValidationError

PHASE_MASK_DB = -60.0
MRSTFT_SIZES = (512, 1024, 2048)
LOG_FLOOR = 1e-7


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 1024
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size & (self.fft_size - 1):
            raise ValidationError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0 < self.hop <= self.fft_size:
            raise ValidationError(f"hop must lie in (0, fft_size], got {self.hop}")
        if self.window != "hann":
            raise ValidationError("only the Hann window is supported")


def hann(size: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(size) / size)


def stft(x, config: StftConfig = StftConfig()) -> np.ndarray:
    """Hann-windowed one-sided STFT, shape ``(frames, fft_size // 2 + 1)``.
    Frames that would run past the end are dropped."""
    x = np.asarray(x, dtype=float)
    n = config.fft_size
    if x.ndim != 1 or len(x) < n:
        raise ShapeError(f"signal of length {x.shape[-1] if x.ndim else 0} is shorter than fft_size {n}")
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[:: config.hop]
    return np.fft.rfft(frames * hann(n), axis=1)


def _samples(x) -> np.ndarray:
    s = x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=float)
    return s[None, :] if s.ndim == 1 else s


def _pair(ref, est):
    r, e = _samples(ref), _samples(est)
    if r.shape != e.shape:
        raise ShapeError(f"reference shape {r.shape} != estimate shape {e.shape}")
    return r, e


def wave_l2(ref, est) -> float:
    r, e = _pair(ref, est)
    return float(np.mean((r - e) ** 2))


def _per_channel_amplitude(r, e, config):
    return [float(np.mean((np.abs(stft(rc, config)) - np.abs(stft(ec, config))) ** 2)) for rc, ec in zip(r, e)]


def amplitude_l2(ref, est, config: StftConfig = StftConfig()) -> float:
    r, e = _pair(ref, est)
    return float(np.mean(_per_channel_amplitude(r, e, config)))


def wrap_phase(delta):
    """Map angles to the principal interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - delta, 2 * np.pi)


def _phase_channel(r, e, config, mask_db=PHASE_MASK_DB):
    R, E = stft(r, config), stft(e, config)
    mag = np.abs(R)
    peak = mag.max()
    mask = mag > 10 ** (mask_db / 20.0) * peak
    if not np.any(mask):
        raise UndefinedMetricError("reference is silent: every phase bin is masked")
    delta = wrap_phase(np.angle(E[mask]) - np.angle(R[mask]))
    return float(np.mean(delta**2))


def phase_l2(ref, est, config: StftConfig = StftConfig()) -> float:
    r, e = _pair(ref, est)
    return float(np.mean([_phase_channel(rc, ec, config) for rc, ec in zip(r, e)]))


def _mrstft_channel(r, e, sizes=MRSTFT_SIZES):
    terms = []
    for n in sizes:
        cfg = StftConfig(n, n // 4)
        R, E = np.abs(stft(r, cfg)), np.abs(stft(e, cfg))
        norm = np.linalg.norm(R)
        if norm == 0:
            raise UndefinedMetricError("reference has zero spectral energy")
        sc = np.linalg.norm(R - E) / norm
        logmag = np.mean(np.abs(np.log(np.maximum(R, LOG_FLOOR)) - np.log(np.maximum(E, LOG_FLOOR))))
        terms.append(sc + logmag)
    return float(np.mean(terms))


def mrstft(ref, est) -> float:
    r, e = _pair(ref, est)
    return float(np.mean([_mrstft_channel(rc, ec) for rc, ec in zip(r, e)]))


@dataclass
class MetricReport:
    wave_l2: float
    amplitude_l2: float
    phase_l2: float
    mrstft: float
    per_channel: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    pesq: float | None = None

    def to_dict(self) -> dict:
        return {
            "wave_l2_x1e3": self.wave_l2 * 1e3,
            "amplitude_l2": self.amplitude_l2,
            "phase_l2": self.phase_l2,
            "mrstft": self.mrstft,
            "pesq": self.pesq,
            "per_channel": self.per_channel,
            "config": self.config,
        }

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def evaluate(ref, est, config: StftConfig = StftConfig()) -> MetricReport:
    r, e = _pair(ref, est)
    names = ["left", "right"] if r.shape[0] == 2 else [f"ch{i}" for i in range(r.shape[0])]
    per = {}
    for name, rc, ec in zip(names, r, e):
        per[name] = {
            "wave_l2_x1e3": float(np.mean((rc - ec) ** 2)) * 1e3,
            "amplitude_l2": _per_channel_amplitude(rc[None], ec[None], config)[0],
            "phase_l2": _phase_channel(rc, ec, config),
            "mrstft": _mrstft_channel(rc, ec),
        }
    cfg = asdict(config)
    cfg.update(phase_mask_db=PHASE_MASK_DB, mrstft_sizes=list(MRSTFT_SIZES), log_floor=LOG_FLOOR)
    return MetricReport(
        wave_l2=float(np.mean((r - e) ** 2)),
        amplitude_l2=float(np.mean([c["amplitude_l2"] for c in per.values()])),
        phase_l2=float(np.mean([c["phase_l2"] for c in per.values()])),
        mrstft=float(np.mean([c["mrstft"] for c in per.values()])),
        per_channel=per,
        config=cfg,
    )


def evaluate_pair(ref_path, est_path, config: StftConfig = StftConfig()) -> MetricReport:
    ref, est = read_wav(ref_path), read_wav(est_path)
    if ref.sample_rate != est.sample_rate:
        raise ShapeError(f"sample rates differ: {ref_path} {ref.sample_rate} Hz, {est_path} {est.sample_rate} Hz")
    if ref.samples.shape != est.samples.shape:
        raise ShapeError(
            f"{ref_path} has {ref.channels} ch x {len(ref)} samples, "
            f"{est_path} has {est.channels} ch x {len(est)} samples"
        )
    try:
        return evaluate(ref, est, config)
    except (ShapeError, UndefinedMetricError) as exc:
        raise type(exc)(f"{ref_path} vs {est_path}: {exc}") from exc
