"""Nearest-point alignment of a correction's first pose onto a base rollout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, Trajectory


@dataclass(frozen=True)
class AlignmentWeights:
    omega_p: float = 1.0
    omega_q: float = 0.5

    def __post_init__(self):
        if not self.omega_p > 0.0:
            raise ValueError("omega_p must be positive")
        if not self.omega_q >= 0.0:
            raise ValueError("omega_q must be nonnegative")


@dataclass(frozen=True)
class AlignmentResult:
    k_star: int
    distance: float


def pose_distances(positions: np.ndarray, quats: np.ndarray, target: Pose,
                   omega_p: float = 1.0, omega_q: float = 0.5) -> np.ndarray:
    """Weighted distance ``omega_p * d_p + omega_q * d_q`` from each row to ``target``."""
    dp = np.linalg.norm(positions - target.p, axis=1)
    dq = 1.0 - np.abs(quats @ target.q)
    return omega_p * dp + omega_q * np.clip(dq, 0.0, 1.0)


def nearest_point(base: Trajectory, human_start: Pose,
                  w: AlignmentWeights | None = None) -> AlignmentResult:
    """Index of the base pose closest to ``human_start``.

    Ties go to the smallest index (``np.argmin`` returns the first minimum).
    """
    if base is None or len(base) == 0:
        raise ValueError("base trajectory is empty")
    w = w or AlignmentWeights()
    D = pose_distances(base.positions, base.quaternions, human_start, w.omega_p, w.omega_q)
    k = int(np.argmin(D))
    return AlignmentResult(k, float(D[k]))
