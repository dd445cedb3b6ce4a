"""Condition tracks for the neural renderer.

Every variant starts with the 7 pose channels (source position and
orientation in listener-head coordinates). The extra channels are:

* ``spherical``: radial velocity of the source relative to each ear
* ``cartesian``: source velocity relative to the listener, world-aligned axes
* ``zeros``: two all-zero channels
* ``time``: two copies of normalised scene time in [0, 1]
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .geometry import (
    EarSide,
    Trajectory,
    align_hemisphere,
    ear_offset,
    estimate_velocities,
    quat_conjugate,
    quat_multiply,
    quat_rotate,
    radial_velocity,
    sample_on_clock,
)

POSE_CHANNELS = ("x", "y", "z", "qx", "qy", "qz", "qw")
QUAT_CHANNELS = ("qx", "qy", "qz", "qw")


class ConditionVariant(enum.Enum):
    ORIGINAL7 = "original"
    SPHERICAL9 = "spherical"
    CARTESIAN = "cartesian"
    ZEROS9 = "zeros"
    TIMESERIES9 = "time"

    @classmethod
    def parse(cls, value) -> "ConditionVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(v.value for v in cls)
            raise ValidationError(f"unknown variant {value!r} (choose from {names})") from None

    @property
    def extra_channels(self) -> tuple[str, ...]:
        return {
            ConditionVariant.ORIGINAL7: (),
            ConditionVariant.SPHERICAL9: ("vr_left", "vr_right"),
            ConditionVariant.CARTESIAN: ("vx", "vy", "vz"),
            ConditionVariant.ZEROS9: ("zero_left", "zero_right"),
            ConditionVariant.TIMESERIES9: ("time_left", "time_right"),
        }[self]

    @property
    def channels(self) -> int:
        return len(POSE_CHANNELS) + len(self.extra_channels)


@dataclass(frozen=True, eq=False)
class ConditionTrack:
    """Per-frame condition vectors, ``values`` shape ``(frames, channels)``;
    frame ``k`` sits at time ``t0 + k / rate``."""

    rate: float
    values: np.ndarray
    channel_names: tuple[str, ...]
    t0: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.channel_names):
            raise ShapeError(f"values shape {v.shape} does not match {len(self.channel_names)} channel names")
        if not np.all(np.isfinite(v)):
            raise ValidationError("condition track contains non-finite values")
        if self.rate <= 0:
            raise ValidationError("condition rate must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / self.rate


def pose_channels(source: Trajectory, listener: Trajectory) -> np.ndarray:
    lpos, lquat = sample_on_clock(listener, source.times)
    inv = quat_conjugate(lquat)
    rel = quat_rotate(inv, source.positions - lpos)
    q = quat_multiply(inv, source.orientations)
    q = align_hemisphere(q / np.linalg.norm(q, axis=1, keepdims=True))
    return np.hstack([rel, q])


def build_condition(scene, variant, smooth: bool = False) -> ConditionTrack:
    """Condition track at the tracking rate for a scene (anything with
    ``source_traj`` and ``listener_traj``)."""
    variant = ConditionVariant.parse(variant)
    source, listener = scene.source_traj, scene.listener_traj
    pose = pose_channels(source, listener)
    n = len(source)
    lpos, lquat = sample_on_clock(listener, source.times)
    if variant is ConditionVariant.SPHERICAL9:
        extra = []
        for side in (EarSide.LEFT, EarSide.RIGHT):
            p = source.positions - (lpos + quat_rotate(lquat, ear_offset(side)))
            extra.append(radial_velocity(p, estimate_velocities(p, source.rate, smooth)))
        extra = np.stack(extra, axis=1)
    elif variant is ConditionVariant.CARTESIAN:
        extra = estimate_velocities(source.positions - lpos, source.rate, smooth)
    elif variant is ConditionVariant.ZEROS9:
        extra = np.zeros((n, 2))
    elif variant is ConditionVariant.TIMESERIES9:
        tau = (source.times - source.times[0]) / (source.times[-1] - source.times[0])
        extra = np.stack([tau, tau], axis=1)
    else:
        extra = np.zeros((n, 0))
    return ConditionTrack(
        source.rate, np.hstack([pose, extra]), POSE_CHANNELS + variant.extra_channels, float(source.times[0])
    )


def resample_condition(track: ConditionTrack, to_rate: float, length: int | None = None) -> ConditionTrack:
    """Linear interpolation onto a finer grid starting at ``track.t0``.

    Quaternion channels are sign-aligned before and renormalised after
    interpolation.
    """
    if to_rate < track.rate:
        raise ValidationError(f"target rate {to_rate} is below the track rate {track.rate}")
    if length is None:
        length = int(np.floor((len(track) - 1) / track.rate * to_rate + 1e-9)) + 1
    src_t = np.arange(len(track)) / track.rate
    dst_t = np.arange(length) / to_rate
    values = track.values.copy()
    qidx = [track.channel_names.index(c) for c in QUAT_CHANNELS if c in track.channel_names]
    if len(qidx) == 4:
        values[:, qidx] = align_hemisphere(values[:, qidx])
    out = np.stack([np.interp(dst_t, src_t, values[:, k]) for k in range(track.channels)], axis=1)
    if len(qidx) == 4:
        q = out[:, qidx]
        out[:, qidx] = q / np.linalg.norm(q, axis=1, keepdims=True)
    return ConditionTrack(to_rate, out, track.channel_names, track.t0)


@dataclass(frozen=True, eq=False)
class ConditionStats:
    mean: np.ndarray
    scale: np.ndarray
    channel_names: tuple[str, ...]

    @classmethod
    def from_tracks(cls, tracks) -> "ConditionStats":
        tracks = list(tracks)
        if not tracks:
            raise ValidationError("need at least one track to compute statistics")
        names = tracks[0].channel_names
        if any(t.channel_names != names for t in tracks):
            raise ShapeError("tracks have different channel layouts")
        stacked = np.vstack([t.values for t in tracks])
        mean = stacked.mean(axis=0)
        var = stacked.var(axis=0)
        # zero-variance channels are only centred
        scale = np.where(var < 1e-12, 1.0, np.sqrt(var))
        return cls(mean, scale, names)


def normalize_condition(track: ConditionTrack, stats: ConditionStats) -> ConditionTrack:
    if track.channel_names != stats.channel_names:
        raise ShapeError("statistics were computed for a different channel layout")
    return ConditionTrack(track.rate, (track.values - stats.mean) / stats.scale, track.channel_names, track.t0)
