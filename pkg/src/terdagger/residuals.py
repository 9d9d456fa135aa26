"""Residual action labels built from an edited rollout.

Residuals are ``(dp, dq)`` pairs: ``dp`` is added to the base position and
``dq`` rotates the base orientation from the left, ``q = dq * q_base``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Iterable, Protocol

import numpy as np

from .alignment import pose_distances
from .geometry import (IDENTITY_QUAT, Pose, Trajectory, Wrench, canonicalize, position_distance, qconj, qmul,
                       resample, unit)

# receding-horizon constants of the base policy: predict n, execute n_e
HORIZON_STEPS = 100
EXECUTE_STEPS = 50


class Region(str, enum.Enum):
    PRE_EDIT = "pre"
    TRANSITION = "transition"
    HUMAN_DEMO = "demo"
    POST_EDIT = "post"

    @classmethod
    def parse_set(cls, text: str) -> frozenset:
        if not text.strip():
            return frozenset()
        return frozenset(cls(t.strip()) for t in text.split(",") if t.strip())


ALL_REGIONS = frozenset(Region)


@dataclass(frozen=True, eq=False)
class Residual:
    dp: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        dp = np.array(self.dp, dtype=float).reshape(3)
        dq = np.array(self.dq, dtype=float).reshape(4)
        dq = canonicalize(unit(dq))
        dp.setflags(write=False)
        dq.setflags(write=False)
        object.__setattr__(self, "dp", dp)
        object.__setattr__(self, "dq", dq)

    @classmethod
    def zero(cls) -> "Residual":
        return cls(np.zeros(3), IDENTITY_QUAT)

    def is_zero(self) -> bool:
        return bool(np.all(self.dp == 0.0) and np.array_equal(self.dq, IDENTITY_QUAT))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.dp, self.dq])


@dataclass(frozen=True, eq=False)
class ResidualSample:
    state: Pose
    base_action: Pose
    residual: Residual
    region: Region
    step_index: int
    # opaque payload for a downstream learner (observations, beliefs, ...)
    observation: Any = field(default=None, compare=False)

    @property
    def target(self) -> Pose:
        return compose_action(self.base_action, self.residual)


class BasePolicy(Protocol):
    def query(self, state: Pose, step: int) -> Pose: ...

    def query_wrench(self, state: Pose, step: int) -> Wrench: ...


class TrajectoryPolicy:
    """Replays a fixed plan: the prediction at ``step`` is ``plan[step + 1]``."""

    def __init__(self, plan: Trajectory):
        self.plan = plan

    def query(self, state: Pose, step: int) -> Pose:
        return self.plan[min(max(step + 1, 0), len(self.plan) - 1)]

    def query_wrench(self, state: Pose, step: int) -> Wrench:
        if self.plan.wrenches is None:
            return Wrench()
        return self.plan.wrenches[min(max(step, 0), len(self.plan) - 1)]


def compose_action(base_action: Pose, residual: Residual) -> Pose:
    if residual.is_zero():
        return base_action
    return Pose(base_action.p + residual.dp, qmul(residual.dq, base_action.q))


def residual_between(target: Pose, base_action: Pose) -> Residual:
    """Inverse of :func:`compose_action`."""
    if target == base_action:
        return Residual.zero()
    return Residual(target.p - base_action.p, qmul(target.q, qconj(base_action.q)))


def match_nearest(human: Trajectory, action: Pose, weight_q: float = 0.5) -> int:
    D = pose_distances(human.positions, human.quaternions, action, 1.0, weight_q)
    return int(np.argmin(D))


def _check_inputs(base, corrected, segment, human, k_star, N, tol=1e-6):
    if not 0 <= N <= k_star < len(base):
        raise ValueError(f"inconsistent window: N={N}, k*={k_star}, n_b={len(base)}")
    if len(segment) != N + 1:
        raise ValueError(f"segment length {len(segment)} != N+1 = {N + 1}")
    if position_distance(segment[-1], human[0]) > tol:
        raise ValueError("segment endpoint does not match the demonstration start")
    if corrected is not None:
        expected = k_star + len(human)
        if len(corrected) != expected:
            raise ValueError(f"corrected length {len(corrected)} != k* + n_h = {expected}")
        if position_distance(corrected[k_star], human[0]) > tol:
            raise ValueError("corrected trajectory is not assembled from this demonstration")


def generate_samples(base_traj: Trajectory, corrected: Trajectory | None,
                     segment: Trajectory, human: Trajectory, k_star: int, N: int,
                     policy: BasePolicy, regions: Iterable[Region] = ALL_REGIONS,
                     match_weight_q: float = 0.5, observation: Any = None) -> list:
    """Emit labelled residual samples for each enabled region.

    * ``pre``: base states ``t < k*-N``, zero residual.
    * ``transition``: base states ``k*-N <= t < k*``, label towards the
      edited pose ``segment[t+1 - (k*-N)]``.
    * ``demo``: demonstration states ``t <= n_h-2``, label towards ``human[t+1]``;
      the policy is queried with the step counter continuing from ``k*``.
    * ``post``: base states ``k* <= t <= n_b-2``, label towards the demonstration
      pose nearest to the base prediction.
    """
    regions = frozenset(Region(r) for r in regions)
    if human.dt != base_traj.dt:
        human = resample(human, base_traj.dt)
    _check_inputs(base_traj, corrected, segment, human, k_star, N)
    start = k_star - N
    out = []
    if Region.PRE_EDIT in regions:
        for t in range(start):
            x = base_traj[t]
            out.append(ResidualSample(x, policy.query(x, t), Residual.zero(),
                                      Region.PRE_EDIT, t, observation))
    if Region.TRANSITION in regions:
        for t in range(start, k_star):
            x = base_traj[t]
            a = policy.query(x, t)
            out.append(ResidualSample(x, a, residual_between(segment[t + 1 - start], a),
                                      Region.TRANSITION, t, observation))
    if Region.HUMAN_DEMO in regions:
        for t in range(len(human) - 1):
            x = human[t]
            a = policy.query(x, k_star + t)
            out.append(ResidualSample(x, a, residual_between(human[t + 1], a),
                                      Region.HUMAN_DEMO, t, observation))
    if Region.POST_EDIT in regions:
        for t in range(k_star, len(base_traj) - 1):
            x = base_traj[t]
            a = policy.query(x, t)
            target = human[match_nearest(human, a, match_weight_q)]
            out.append(ResidualSample(x, a, residual_between(target, a),
                                      Region.POST_EDIT, t, observation))
    return out
