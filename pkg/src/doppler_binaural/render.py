"""Physical binaural renderer: time-variant fractional delay per ear,
distance attenuation and a smooth head-shadow gain.

Two propagation models are available. ``"reception"`` is the classic
geometric warp: the delay at output sample ``n`` is the source-to-ear
distance at the *reception* time divided by ``c``. ``"emission"`` solves the
retarded-time equation ``c (t - tau) = |p_s(tau) - p_e(t)|`` exactly, which
yields the moving-source Doppler ratio ``c / (c + v_r)``. Scene references
are rendered with ``"emission"`` and ``"sinc8"``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio import SAMPLE_RATE, AudioBuffer
from .errors import CoverageError, SupersonicError, ValidationError
from .geometry import (
    R_MIN,
    EarSide,
    Trajectory,
    ear_axis,
    ear_offset,
    quat_rotate,
    sample_on_clock,
)

INTERPOLATORS = ("linear", "sinc8")
PROPAGATIONS = ("reception", "emission")
SINC_TAPS = 8


@dataclass(frozen=True)
class RenderConfig:
    speed_of_sound: float = 343.0
    interp: str = "linear"
    r_min: float = R_MIN
    attenuation_ref: float = 1.0
    head_shadow: bool = True
    propagation: str = "reception"
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not self.speed_of_sound > 0:
            raise ValidationError("speed_of_sound must be positive")
        if not self.attenuation_ref > 0:
            raise ValidationError("attenuation_ref must be positive")
        if self.interp not in INTERPOLATORS:
            raise ValidationError(f"interp must be one of {INTERPOLATORS}")
        if self.propagation not in PROPAGATIONS:
            raise ValidationError(f"propagation must be one of {PROPAGATIONS}")

    @property
    def samples_per_meter(self) -> float:
        return self.sample_rate / self.speed_of_sound


REFERENCE_CONFIG = RenderConfig(interp="sinc8", propagation="emission")


@dataclass(frozen=True, eq=False)
class Warpfield:
    """Fractional read position into the input for every output sample."""

    positions: np.ndarray
    side: EarSide | None = None

    def __post_init__(self):
        rho = np.asarray(self.positions, dtype=float)
        if rho.ndim != 1 or not np.all(np.isfinite(rho)):
            raise ValidationError("warpfield must be a finite 1-D sequence")
        if np.any(rho > np.arange(len(rho)) + 1e-9):
            raise ValidationError("warpfield reads future samples")
        object.__setattr__(self, "positions", rho)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def delay(self) -> np.ndarray:
        return np.arange(len(self.positions)) - self.positions


# -- trajectory sampling -----------------------------------------------------

def _listener_on_clock(source: Trajectory, listener: Trajectory):
    return sample_on_clock(listener, source.times)


def check_coverage(length: int, sample_rate: int, *trajectories: Trajectory) -> None:
    end = (length - 1) / sample_rate
    for traj in trajectories:
        if traj.times[0] > 1e-9 or traj.times[-1] < end - 1e-9:
            raise CoverageError(
                f"trajectory spans [{traj.times[0]:.6f}, {traj.times[-1]:.6f}] s "
                f"but the audio needs [0, {end:.6f}] s"
            )


def ear_distances(source: Trajectory, listener: Trajectory, side: EarSide) -> np.ndarray:
    """Source-to-ear distance at the source trajectory's timestamps."""
    lpos, lquat = _listener_on_clock(source, listener)
    ears = lpos + _rotate_offset(lquat, side)
    return np.linalg.norm(source.positions - ears, axis=1)


def _rotate_offset(quats, side):
    return quat_rotate(quats, ear_offset(side))


def _interp_rows(t, times, values):
    return np.stack([np.interp(t, times, values[:, k]) for k in range(values.shape[1])], axis=1)


# -- operations --------------------------------------------------------------

def geometric_warpfield(
    mono_len: int,
    source_traj: Trajectory,
    listener_traj: Trajectory,
    side: EarSide,
    config: RenderConfig = RenderConfig(),
) -> Warpfield:
    sr = config.sample_rate
    check_coverage(mono_len, sr, source_traj, listener_traj)
    n = np.arange(mono_len, dtype=float)
    t = n / sr
    if config.propagation == "reception":
        r = np.interp(t, source_traj.times, ear_distances(source_traj, listener_traj, side))
        rho = n - r * config.samples_per_meter
    else:
        rho = _emission_positions(t, source_traj, listener_traj, side, config)
    return Warpfield(np.clip(rho, 0.0, n), side)


def _emission_positions(t, source, listener, side, config):
    lpos, lquat = _listener_on_clock(source, listener)
    ears = _interp_rows(t, source.times, lpos + _rotate_offset(lquat, side))
    c = config.speed_of_sound
    # fixed point of tau = t - |p_s(tau) - p_e(t)| / c; contraction factor |v|/c
    tau = t - np.linalg.norm(_interp_rows(t, source.times, source.positions) - ears, axis=1) / c
    for _ in range(50):
        src = _interp_rows(tau, source.times, source.positions)
        new = t - np.linalg.norm(src - ears, axis=1) / c
        done = np.max(np.abs(new - tau)) < 1e-13
        tau = new
        if done:
            break
    return tau * config.sample_rate


def _gather(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    valid = (idx >= 0) & (idx < len(x))
    return np.where(valid, x[np.clip(idx, 0, len(x) - 1)], 0.0)


def interp_linear(x: np.ndarray, rho: np.ndarray) -> np.ndarray:
    i0 = np.floor(rho).astype(np.int64)
    frac = rho - i0
    return (1.0 - frac) * _gather(x, i0) + frac * _gather(x, i0 + 1)


def interp_sinc8(x: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """8-tap Hann-windowed sinc interpolation, weights normalised to unit DC gain."""
    i0 = np.floor(rho).astype(np.int64)
    frac = rho - i0
    half = SINC_TAPS // 2
    offsets = np.arange(-half + 1, half + 1)
    dist = frac[:, None] - offsets[None, :]
    w = np.sinc(dist) * (0.5 + 0.5 * np.cos(np.pi * dist / half))
    w /= w.sum(axis=1, keepdims=True)
    taps = _gather(x, i0[:, None] + offsets[None, :])
    out = np.sum(w * taps, axis=1)
    # sinc is only approximately zero at non-zero integers in floating point
    on_grid = frac == 0.0
    out[on_grid] = _gather(x, i0[on_grid])
    return out


def apply_warpfield(mono, w: Warpfield, config: RenderConfig = RenderConfig()) -> np.ndarray:
    x = mono.mono if isinstance(mono, AudioBuffer) else np.asarray(mono, dtype=float)
    if x.ndim != 1:
        raise ValidationError("apply_warpfield expects a single channel")
    rho = w.positions
    if config.interp == "linear":
        return interp_linear(x, rho)
    return interp_sinc8(x, rho)


def ear_gain(mono_len: int, source_traj: Trajectory, listener_traj: Trajectory, side: EarSide,
             config: RenderConfig = RenderConfig()) -> np.ndarray:
    """Per-sample gain: 1/r attenuation with a floor, times the optional head shadow."""
    lpos, lquat = _listener_on_clock(source_traj, listener_traj)
    ears = lpos + _rotate_offset(lquat, side)
    rel = source_traj.positions - ears
    r = np.linalg.norm(rel, axis=1)
    gain = config.attenuation_ref / np.maximum(r, config.attenuation_ref * 0.1)
    if config.head_shadow:
        cos_theta = np.sum(ear_axis(lquat, side) * rel, axis=1) / np.maximum(r, config.r_min)
        gain = gain * (0.6 + 0.4 * (1.0 + cos_theta) / 2.0)
    t = np.arange(mono_len) / config.sample_rate
    return np.interp(t, source_traj.times, gain)


def render_geometric(
    mono: AudioBuffer,
    source_traj: Trajectory,
    listener_traj: Trajectory,
    config: RenderConfig = RenderConfig(),
) -> AudioBuffer:
    x = mono.mono
    n = len(x)
    if config.sample_rate != mono.sample_rate:
        config = replace(config, sample_rate=mono.sample_rate)
    out = []
    for side in (EarSide.LEFT, EarSide.RIGHT):
        w = geometric_warpfield(n, source_traj, listener_traj, side, config)
        out.append(apply_warpfield(x, w, config) * ear_gain(n, source_traj, listener_traj, side, config))
    return AudioBuffer(np.stack(out), mono.sample_rate)


def doppler_frequency(f0: float, v_r: float, config: RenderConfig = RenderConfig()) -> float:
    """Received frequency for a source with signed radial velocity ``v_r``
    (positive = receding)."""
    c = config.speed_of_sound
    if v_r <= -c:
        raise SupersonicError(f"radial velocity {v_r} m/s reaches the speed of sound")
    return c / (c + v_r) * f0
