"""Poses, wrenches and uniformly sampled trajectories.

Quaternions are stored scalar-first ``(w, x, y, z)`` and kept on the
``w >= 0`` hemisphere.  All value types are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# quaternion algebra
# ---------------------------------------------------------------------------

def canonicalize(q) -> np.ndarray:
    """Return ``q`` on the ``w >= 0`` hemisphere.

    When ``w == 0`` the first nonzero component is made nonnegative, so the
    representative is unique.
    """
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        return -q
    if q[0] == 0.0:
        for c in q[1:]:
            if c != 0.0:
                return -q if c < 0.0 else q.copy()
    return q.copy()


def unit(q) -> np.ndarray:
    """Normalize ``q``; inputs whose squared norm is within 2e-14 of one pass
    through, so normalization is idempotent bit for bit."""
    q = np.asarray(q, dtype=float)
    n2 = float(q @ q)
    if not (math.isfinite(n2) and n2 > 0.0):
        raise ValueError(f"invalid quaternion {q}")
    return q.copy() if abs(n2 - 1.0) <= 2e-14 else q / math.sqrt(n2)


def qmul(a, b) -> np.ndarray:
    # plain floats: scalar numpy arithmetic is several times slower
    aw, ax, ay, az = np.asarray(a, dtype=float).tolist()
    bw, bx, by, bz = np.asarray(b, dtype=float).tolist()
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def qconj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = math.sqrt(float(axis @ axis))
    if n == 0.0:
        return IDENTITY_QUAT.copy()
    s = math.sin(0.5 * angle) / n
    return np.array([math.cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_rotvec(rv) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    return quat_from_axis_angle(rv, math.sqrt(float(rv @ rv)))


def quat_to_rotvec(q) -> np.ndarray:
    """Axis-angle vector of ``q``, taking the shorter rotation (angle <= pi)."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    v = q[1:]
    s = math.sqrt(float(v @ v))
    if s < 1e-12:
        # small-angle limit of 2*atan2(s, w)/s
        return 2.0 * v / q[0]
    return (2.0 * math.atan2(s, q[0]) / s) * v


def rotate(q, v) -> np.ndarray:
    """Rotate vector ``v`` by unit quaternion ``q``."""
    w = q[0]
    u = np.asarray(q[1:], dtype=float)
    v = np.asarray(v, dtype=float)
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_slerp(a, b, t: float) -> np.ndarray:
    """Shorter-arc spherical interpolation between unit quaternions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = float(np.dot(a, b))
    if d < 0.0:
        b = -b
        d = -d
    if d > 0.9995:
        r = a + t * (b - a)
        return r / np.linalg.norm(r)
    theta = math.acos(min(d, 1.0))
    s = math.sin(theta)
    r = (math.sin((1.0 - t) * theta) / s) * a + (math.sin(t * theta) / s) * b
    return r / np.linalg.norm(r)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    """Position (m) plus unit quaternion orientation."""

    p: np.ndarray
    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(3)
        q = np.array(self.q, dtype=float).reshape(4)
        n2 = float(q @ q)
        if not (math.isfinite(n2) and n2 > 0.0):
            raise ValueError(f"invalid quaternion {q}")
        if abs(n2 - 1.0) > 2e-14:
            q /= math.sqrt(n2)
        # in-place form of canonicalize()
        w = q[0]
        if w < 0.0 or (w == 0.0 and next((c for c in q[1:] if c != 0.0), 0.0) < 0.0):
            q = -q
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "q", _frozen(q))

    @classmethod
    def from_array(cls, a) -> "Pose":
        a = np.asarray(a, dtype=float)
        return cls(a[:3], a[3:7])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.p, other.p) and np.array_equal(self.q, other.q))

    def __repr__(self) -> str:
        return f"Pose(p={self.p.tolist()}, q={self.q.tolist()})"


@dataclass(frozen=True, eq=False)
class Wrench:
    """Force (N) and torque (N m)."""

    f: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        a = np.empty(6)
        a[:3] = np.reshape(self.f, 3)
        a[3:] = np.reshape(self.tau, 3)
        if not np.isfinite(a).all():
            raise ValueError("wrench components must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "f", a[:3])
        object.__setattr__(self, "tau", a[3:])

    @classmethod
    def from_array(cls, a) -> "Wrench":
        a = np.asarray(a, dtype=float)
        return cls(a[:3], a[3:6])

    def as_array(self) -> np.ndarray:
        return self._a.copy()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Wrench):
            return NotImplemented
        return bool(np.array_equal(self.as_array(), other.as_array()))

    def __repr__(self) -> str:
        return f"Wrench(f={self.f.tolist()}, tau={self.tau.tolist()})"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly time-stamped pose sequence, optionally with wrenches."""

    poses: tuple
    dt: float = 0.02
    wrenches: tuple | None = None

    def __post_init__(self):
        poses = tuple(self.poses)
        if len(poses) < 1:
            raise ValueError("trajectory needs at least one pose")
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "dt", float(self.dt))
        if self.wrenches is not None:
            wrenches = tuple(self.wrenches)
            if len(wrenches) != len(poses):
                raise ValueError(
                    f"wrenches length {len(wrenches)} != poses length {len(poses)}")
            object.__setattr__(self, "wrenches", wrenches)

    @classmethod
    def from_arrays(cls, positions, quats=None, dt: float = 0.02, wrenches=None) -> "Trajectory":
        positions = np.asarray(positions, dtype=float)
        if quats is None:
            quats = np.tile(IDENTITY_QUAT, (len(positions), 1))
        poses = [Pose(p, q) for p, q in zip(positions, np.asarray(quats, dtype=float))]
        ws = None
        if wrenches is not None:
            ws = [Wrench.from_array(w) for w in np.asarray(wrenches, dtype=float)]
        return cls(poses, dt, ws)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i) -> Pose:
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    @cached_property
    def positions(self) -> np.ndarray:
        return _frozen(np.array([x.p for x in self.poses]))

    @cached_property
    def quaternions(self) -> np.ndarray:
        return _frozen(np.array([x.q for x in self.poses]))

    @property
    def duration(self) -> float:
        return (len(self.poses) - 1) * self.dt

    def slice(self, start: int, stop: int | None = None) -> "Trajectory":
        ws = None if self.wrenches is None else self.wrenches[start:stop]
        return Trajectory(self.poses[start:stop], self.dt, ws)


# ---------------------------------------------------------------------------
# metrics and interpolation
# ---------------------------------------------------------------------------

def position_distance(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(a.p - b.p))


def quaternion_distance(a: Pose, b: Pose) -> float:
    """``1 - |<q_a, q_b>|``; 0 for equal rotations, 1 for rotations pi apart."""
    d = 1.0 - abs(float(np.dot(a.q, b.q)))
    return min(max(d, 0.0), 1.0)


def slerp(a: Pose, b: Pose, t: float) -> Pose:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    return Pose(a.p + t * (b.p - a.p), quat_slerp(a.q, b.q, t))


def resample(traj: Trajectory, new_dt: float) -> Trajectory:
    """Resample ``traj`` onto a ``new_dt`` grid.

    Samples fall at ``j * new_dt``; if the duration is not a multiple of
    ``new_dt`` the final sample is clamped to the original endpoint, so both
    endpoints are always kept exactly.
    """
    if len(traj) == 0:
        raise ValueError("cannot resample an empty trajectory")
    if not new_dt > 0.0:
        raise ValueError(f"new_dt must be positive, got {new_dt}")
    if new_dt == traj.dt or len(traj) == 1:
        return Trajectory(traj.poses, new_dt, traj.wrenches)
    T = traj.duration
    m = int(math.ceil(T / new_dt - 1e-9)) + 1
    poses, wrenches = [], []
    n = len(traj)
    for j in range(m):
        u = min(j * new_dt, T) / traj.dt
        i = int(math.floor(u + 1e-9))
        frac = u - i
        if i >= n - 1:
            i, frac = n - 1, 0.0
        if abs(frac) < 1e-9:
            poses.append(traj[i])
            if traj.wrenches is not None:
                wrenches.append(traj.wrenches[i])
            continue
        poses.append(slerp(traj[i], traj[i + 1], frac))
        if traj.wrenches is not None:
            wa = traj.wrenches[i].as_array()
            wb = traj.wrenches[i + 1].as_array()
            wrenches.append(Wrench.from_array(wa + frac * (wb - wa)))
    return Trajectory(poses, new_dt, wrenches if traj.wrenches is not None else None)


def pose_steps(traj: Trajectory) -> np.ndarray:
    """Euclidean length of each consecutive position step."""
    P = traj.positions
    if len(P) < 2:
        return np.zeros(0)
    return np.linalg.norm(np.diff(P, axis=0), axis=1)


def stack_poses(poses: Sequence[Pose]) -> tuple[np.ndarray, np.ndarray]:
    return np.array([x.p for x in poses]), np.array([x.q for x in poses])
