"""Rigid-body poses, ear positions and radial velocity.

Conventions: the listener's local frame is +x forward, +y left, +z up.
Quaternions are Hamilton, stored ``(qx, qy, qz, qw)``, and rotate local
vectors into the world frame. Vectors are plain ``numpy`` arrays of shape
``(3,)`` (or ``(..., 3)`` for the vectorised helpers).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateGeometryError,
    InsufficientDataError,
    InvalidPoseError,
    ValidationError,
)

EAR_DISTANCE = 0.18
R_MIN = 1e-4
QUAT_TOL = 1e-6
TRACKING_RATE = 120.0


class EarSide(enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def sign(self) -> float:
        return 1.0 if self is EarSide.LEFT else -1.0


def vec3(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != (3,):
        raise ValidationError(f"expected 3 components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"non-finite vector {v}")
    return v


# -- quaternion helpers (vectorised over leading axes) ----------------------

def quat_rotate(q, v) -> np.ndarray:
    """Rotate vectors ``v`` by unit quaternions ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = q[..., :3]
    w = q[..., 3:4]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_conjugate(q) -> np.ndarray:
    q = np.array(q, dtype=float)
    q[..., :3] *= -1.0
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a * b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ax, ay, az, aw = np.moveaxis(a, -1, 0)
    bx, by, bz, bw = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def align_hemisphere(quats: np.ndarray) -> np.ndarray:
    """Flip signs so consecutive quaternions have a non-negative dot product."""
    q = np.array(quats, dtype=float)
    for i in range(1, len(q)):
        if np.dot(q[i - 1], q[i]) < 0.0:
            q[i] = -q[i]
    return q


@dataclass(frozen=True)
class Quaternion:
    qx: float = 0.0
    qy: float = 0.0
    qz: float = 0.0
    qw: float = 1.0

    def __post_init__(self):
        norm = float(np.linalg.norm(self.as_array()))
        if not np.isfinite(norm) or abs(norm - 1.0) > QUAT_TOL:
            raise InvalidPoseError(f"quaternion norm {norm} is not unit")

    @classmethod
    def normalized(cls, qx, qy, qz, qw) -> "Quaternion":
        q = np.array([qx, qy, qz, qw], dtype=float)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise InvalidPoseError("cannot normalise a zero quaternion")
        return cls(*(q / n))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        s = np.sin(angle / 2.0)
        return cls.normalized(*(axis * s), np.cos(angle / 2.0))

    def as_array(self) -> np.ndarray:
        return np.array([self.qx, self.qy, self.qz, self.qw])

    def rotate(self, v) -> np.ndarray:
        return quat_rotate(self.as_array(), v)


IDENTITY = Quaternion()


@dataclass(frozen=True)
class Pose:
    t: float
    position: np.ndarray
    orientation: Quaternion = IDENTITY

    def __post_init__(self):
        if not np.isfinite(self.t) or self.t < 0:
            raise InvalidPoseError(f"pose time {self.t} must be finite and non-negative")
        object.__setattr__(self, "position", vec3(self.position))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled pose sequence.

    Stored column-wise: ``times`` (N,), ``positions`` (N, 3) and
    ``orientations`` (N, 4) as ``(qx, qy, qz, qw)``.
    """

    rate: float
    times: np.ndarray
    positions: np.ndarray
    orientations: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        pos = np.asarray(self.positions, dtype=float)
        quats = np.asarray(self.orientations, dtype=float)
        n = len(times)
        if n < 3:
            raise InsufficientDataError(f"trajectory needs at least 3 poses, got {n}")
        if pos.shape != (n, 3) or quats.shape != (n, 4):
            raise ValidationError("trajectory arrays have inconsistent shapes")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(pos)) and np.all(np.isfinite(quats))):
            raise ValidationError("trajectory contains non-finite values")
        if self.rate <= 0:
            raise ValidationError(f"rate must be positive, got {self.rate}")
        if times[0] < 0:
            raise InvalidPoseError("trajectory times must be non-negative")
        dt = np.diff(times)
        if np.any(dt <= 0):
            bad = int(np.argmax(dt <= 0)) + 1
            raise ValidationError(f"timestamps not strictly increasing at pose {bad}")
        if np.max(np.abs(dt - 1.0 / self.rate)) > 1e-6:
            raise ValidationError(f"timestamps are not uniformly spaced at {self.rate} Hz")
        norms = np.linalg.norm(quats, axis=1)
        if np.max(np.abs(norms - 1.0)) > QUAT_TOL:
            raise InvalidPoseError("trajectory orientation is not unit-norm")
        for name, arr in (("times", times), ("positions", pos), ("orientations", quats)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "rate", float(self.rate))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def pose(self, index: int) -> Pose:
        return Pose(float(self.times[index]), self.positions[index], Quaternion(*self.orientations[index]))

    @property
    def poses(self) -> list[Pose]:
        return [self.pose(i) for i in range(len(self))]

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], rate: float = TRACKING_RATE) -> "Trajectory":
        return cls(
            rate,
            np.array([p.t for p in poses]),
            np.array([p.position for p in poses]),
            np.array([p.orientation.as_array() for p in poses]),
        )

    @classmethod
    def stationary(cls, times, position=(0.0, 0.0, 0.0), orientation=IDENTITY, rate=TRACKING_RATE):
        times = np.asarray(times, dtype=float)
        n = len(times)
        return cls(rate, times, np.tile(vec3(position), (n, 1)), np.tile(orientation.as_array(), (n, 1)))

    def same_clock(self, other: "Trajectory") -> bool:
        return len(self) == len(other) and np.allclose(self.times, other.times, atol=1e-9)

    def transformed(self, rotation: Quaternion, translation=(0.0, 0.0, 0.0)) -> "Trajectory":
        """Apply a global rigid transform (rotate, then translate)."""
        q = rotation.as_array()
        pos = quat_rotate(q, self.positions) + vec3(translation)
        quats = quat_multiply(np.broadcast_to(q, self.orientations.shape), self.orientations)
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        return Trajectory(self.rate, self.times, pos, quats)


# -- operations -------------------------------------------------------------

def ear_offset(side: EarSide) -> np.ndarray:
    return np.array([0.0, side.sign * EAR_DISTANCE / 2.0, 0.0])


def ear_position(listener: Pose, side: EarSide) -> np.ndarray:
    q = listener.orientation.as_array()
    if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
        raise InvalidPoseError("listener orientation is not unit-norm")
    return listener.position + quat_rotate(q, ear_offset(side))


def ear_positions(listener: Trajectory, side: EarSide) -> np.ndarray:
    """Ear position at every listener pose, shape (N, 3)."""
    return listener.positions + quat_rotate(listener.orientations, ear_offset(side))


def ear_axis(orientations: np.ndarray, side: EarSide) -> np.ndarray:
    """Unit outward axis of an ear in world coordinates."""
    return quat_rotate(orientations, np.array([0.0, side.sign, 0.0]))


def sample_on_clock(traj: Trajectory, times: np.ndarray):
    """Positions and orientations of ``traj`` at ``times`` (linear / normalised lerp)."""
    times = np.asarray(times, dtype=float)
    if len(times) == len(traj) and np.allclose(times, traj.times, atol=1e-9):
        return traj.positions, traj.orientations
    pos = np.stack([np.interp(times, traj.times, traj.positions[:, k]) for k in range(3)], axis=1)
    q = align_hemisphere(traj.orientations)
    q = np.stack([np.interp(times, traj.times, q[:, k]) for k in range(4)], axis=1)
    return pos, q / np.linalg.norm(q, axis=1, keepdims=True)


def relative_position(source, ear) -> np.ndarray:
    return np.asarray(source, dtype=float) - np.asarray(ear, dtype=float)


def smooth_positions(positions: np.ndarray, width: int = 5) -> np.ndarray:
    """Centered moving average; the window shrinks symmetrically at the ends
    so linear motion passes through unchanged."""
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    half = width // 2
    csum = np.vstack([np.zeros((1,) + positions.shape[1:]), np.cumsum(positions, axis=0)])
    idx = np.arange(n)
    k = np.minimum(np.minimum(idx, n - 1 - idx), half)
    return (csum[idx + k + 1] - csum[idx - k]) / (2 * k + 1)[:, None]


def estimate_velocities(positions: np.ndarray, rate: float, smooth: bool = False) -> np.ndarray:
    """Finite-difference velocity for a uniformly sampled (N, 3) position series."""
    p = np.asarray(positions, dtype=float)
    if len(p) < 3:
        raise InsufficientDataError(f"velocity estimation needs at least 3 samples, got {len(p)}")
    if smooth:
        p = smooth_positions(p)
    v = np.empty_like(p)
    v[1:-1] = (p[2:] - p[:-2]) * (rate / 2.0)
    v[0] = (p[1] - p[0]) * rate
    v[-1] = (p[-1] - p[-2]) * rate
    return v


def estimate_velocity(traj: Trajectory, index: int, smooth: bool = False) -> np.ndarray:
    n = len(traj)
    if not 0 <= index < n:
        raise IndexError(f"index {index} outside trajectory of length {n}")
    return estimate_velocities(traj.positions, traj.rate, smooth)[index]


def radial_velocity(p, v, r_min: float = R_MIN):
    """Signed speed along the ear-to-source direction, ``(p . v) / |p|``.

    Positive when the source recedes. Accepts single vectors or stacks of
    shape (..., 3); returns a float or an array accordingly.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(p, axis=-1)
    if np.any(r <= r_min):
        raise DegenerateGeometryError(f"source within {r_min} m of the ear")
    out = np.sum(p * v, axis=-1) / r
    return float(out) if out.ndim == 0 else out
