"""Scripted base policy and the corrective-demonstration oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import IDENTITY_QUAT, Pose, Trajectory, Wrench, quat_from_axis_angle, quat_slerp
from ..residuals import EXECUTE_STEPS, HORIZON_STEPS
from .scene import SceneConfig, contact_force, contact_wrench


@dataclass(frozen=True)
class PolicyConfig:
    belief_bias: tuple = (0.0, 0.004, 0.0)
    belief_noise: float = 2e-4
    approach_height: float = 0.08
    approach_speed: float = 0.08
    descent_speed: float = 0.05
    target_depth: float = 0.012
    demo_noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "belief_bias", tuple(float(b) for b in self.belief_bias))
        if self.approach_speed <= 0.0 or self.descent_speed <= 0.0:
            raise ValueError("speeds must be positive")


def start_pose(scene: SceneConfig) -> Pose:
    """Fixed initial pose above the nominal socket centre."""
    c = np.array(scene.socket_center)
    yaw = math.radians(scene.start_yaw_deg)
    return Pose(c + [0.0, 0.0, scene.start_height], quat_from_axis_angle([0, 0, 1], yaw))


def _linear(a: Pose, b: Pose, speed: float, dt: float) -> list:
    """Poses from ``a`` (exclusive) to ``b`` (inclusive) at roughly ``speed``."""
    n = max(1, int(math.ceil(np.linalg.norm(b.p - a.p) / (speed * dt) - 1e-9)))
    return [Pose(a.p + (i / n) * (b.p - a.p), quat_slerp(a.q, b.q, i / n)) for i in range(1, n + 1)]


def insertion_plan(start: Pose, target: np.ndarray, cfg: PolicyConfig, dt: float) -> tuple[Trajectory, int]:
    """Start -> approach pose above ``target`` -> straight descent to ``target - depth``.

    Returns the plan and the index of the approach pose.
    """
    approach = Pose(np.asarray(target) + [0.0, 0.0, cfg.approach_height], IDENTITY_QUAT)
    final = Pose(np.asarray(target) - [0.0, 0.0, cfg.target_depth], IDENTITY_QUAT)
    poses = [start] + _linear(start, approach, cfg.approach_speed, dt)
    approach_index = len(poses) - 1
    poses += _linear(approach, final, cfg.descent_speed, dt)
    return Trajectory(poses, dt), approach_index


class ScriptedBasePolicy:
    """Rule-based stand-in for a learned base policy.

    Plans from the fixed start to an approach pose above its *believed*
    socket position and descends from there.  Predictions are time indexed:
    ``query(state, step)`` is ``plan[step + 1]``.  ``query_wrench`` returns
    the contact wrench a correctly aligned peg would feel at the state's
    height, which is what the policy expects if its belief is right.
    """

    horizon = HORIZON_STEPS
    execute = EXECUTE_STEPS

    def __init__(self, scene: SceneConfig, cfg: PolicyConfig, belief, start: Pose | None = None,
                 dt: float = 0.02):
        self.scene = scene
        self.cfg = cfg
        self.belief = np.asarray(belief, dtype=float)
        self.believed_scene = scene.with_socket(self.belief)
        self.start = start if start is not None else start_pose(scene)
        self.plan, self.approach_index = insertion_plan(self.start, self.belief, cfg, dt)

    @classmethod
    def for_episode(cls, scene: SceneConfig, cfg: PolicyConfig, rng: np.random.Generator,
                    start: Pose | None = None, dt: float = 0.02) -> "ScriptedBasePolicy":
        """Belief = true socket + systematic bias + lateral Gaussian noise from ``rng``."""
        noise = np.zeros(3)
        if cfg.belief_noise > 0.0:
            noise[:2] = rng.normal(0.0, cfg.belief_noise, 2)
        belief = np.array(scene.socket_center) + np.array(cfg.belief_bias) + noise
        return cls(scene, cfg, belief, start, dt)

    def query(self, state: Pose, step: int) -> Pose:
        return self.plan[min(max(step + 1, 0), len(self.plan) - 1)]

    def chunk(self, step: int) -> list:
        """Receding-horizon prediction ``plan[step+1 : step+1+horizon]``, clamped at the end."""
        n = len(self.plan)
        return [self.plan[min(step + 1 + i, n - 1)] for i in range(self.horizon)]

    def query_wrench(self, state: Pose, step: int) -> Wrench:
        aligned = Pose([self.belief[0], self.belief[1], state.p[2]], state.q)
        return contact_wrench(aligned, self.believed_scene)

    def expected_contact(self, z: float) -> tuple:
        """Scalar force form of :meth:`query_wrench`."""
        return contact_force(self.believed_scene, self.belief[0], self.belief[1], z)


def corrective_demo(scene: SceneConfig, cfg: PolicyConfig, dt: float = 0.02,
                    rng: np.random.Generator | None = None) -> Trajectory:
    """Straight-in insertion from ``approach_height`` above the true socket.

    ``cfg.demo_noise`` adds i.i.d. Gaussian position noise to every pose but
    the first.
    """
    c = np.array(scene.socket_center)
    top = Pose(c + [0.0, 0.0, cfg.approach_height], IDENTITY_QUAT)
    bottom = Pose(c - [0.0, 0.0, cfg.target_depth], IDENTITY_QUAT)
    poses = [top] + _linear(top, bottom, cfg.descent_speed, dt)
    if cfg.demo_noise > 0.0:
        rng = rng or np.random.default_rng(0)
        poses = [poses[0]] + [Pose(x.p + rng.normal(0.0, cfg.demo_noise, 3), x.q) for x in poses[1:]]
    return Trajectory(poses, dt)
