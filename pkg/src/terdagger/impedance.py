"""Cartesian impedance control.

Contains the task-space impedance law, its torque-level form on a planar
two-link arm (Jacobian transpose plus gravity compensation), external wrench
estimation through the pseudoinverse of the Jacobian transpose, and a 6-DOF
virtual body integrated with semi-implicit Euler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, Wrench, qconj, qmul, quat_from_rotvec, quat_to_rotvec


@dataclass(frozen=True, eq=False)
class ImpedanceParams:
    K: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in ("K", "D"):
            M = np.array(getattr(self, name), dtype=float)
            if M.shape != (6, 6):
                raise ValueError(f"{name} must be 6x6")
            if not np.allclose(M, M.T, atol=1e-12, rtol=0.0):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-9:
                raise ValueError(f"{name} must be positive semidefinite")
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @classmethod
    def diagonal(cls, k_trans, k_rot, d_trans, d_rot) -> "ImpedanceParams":
        k = np.broadcast_to(np.r_[np.broadcast_to(k_trans, 3), np.broadcast_to(k_rot, 3)], 6)
        d = np.broadcast_to(np.r_[np.broadcast_to(d_trans, 3), np.broadcast_to(d_rot, 3)], 6)
        return cls(np.diag(k), np.diag(d))

    @classmethod
    def critically_damped(cls, k_trans, k_rot, mass=1.0, inertia=0.01, zeta=1.0) -> "ImpedanceParams":
        """Damping ``2 * zeta * sqrt(k * m)`` per axis."""
        m = np.r_[np.broadcast_to(mass, 3), np.broadcast_to(inertia, 3)]
        k = np.r_[np.broadcast_to(k_trans, 3), np.broadcast_to(k_rot, 3)]
        return cls(np.diag(k), np.diag(2.0 * zeta * np.sqrt(k * m)))

    def without_stiffness(self) -> "ImpedanceParams":
        return ImpedanceParams(np.zeros((6, 6)), self.D)


def pose_error(x_d: Pose, x: Pose) -> np.ndarray:
    """``[p_d - p, rotvec(q_d * q^-1)]``; the rotation part is the shorter arc."""
    return np.concatenate([x_d.p - x.p, quat_to_rotvec(qmul(x_d.q, qconj(x.q)))])


def impedance_wrench(x_d: Pose, xdot_d, x: Pose, xdot, p: ImpedanceParams) -> Wrench:
    e = pose_error(x_d, x)
    edot = np.asarray(xdot_d, dtype=float) - np.asarray(xdot, dtype=float)
    return Wrench.from_array(p.K @ e + p.D @ edot)


# ---------------------------------------------------------------------------
# planar two-link arm
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainModel:
    """Planar two-link arm in the x-y plane.

    Link masses sit at link midpoints.  Only the tip position is controlled,
    so ``J`` is the 2x2 positional Jacobian.
    """

    lengths: tuple = (1.0, 1.0)
    masses: tuple = (1.0, 1.0)
    gravity: tuple = (0.0, -9.81, 0.0)
    theta: tuple = (0.0, 0.0)
    theta_dot: tuple = (0.0, 0.0)

    def __post_init__(self):
        if min(self.lengths) <= 0.0:
            raise ValueError("link lengths must be positive")
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(self, "theta_dot", tuple(float(t) for t in self.theta_dot))

    def with_state(self, theta, theta_dot=(0.0, 0.0)) -> "ChainModel":
        return replace(self, theta=tuple(theta), theta_dot=tuple(theta_dot))

    def forward_kinematics(self, theta=None) -> np.ndarray:
        t1, t2 = self.theta if theta is None else theta
        l1, l2 = self.lengths
        return np.array([l1 * math.cos(t1) + l2 * math.cos(t1 + t2),
                         l1 * math.sin(t1) + l2 * math.sin(t1 + t2)])

    def jacobian(self, theta=None) -> np.ndarray:
        t1, t2 = self.theta if theta is None else theta
        l1, l2 = self.lengths
        s1, c1 = math.sin(t1), math.cos(t1)
        s12, c12 = math.sin(t1 + t2), math.cos(t1 + t2)
        return np.array([[-l1 * s1 - l2 * s12, -l2 * s12],
                         [l1 * c1 + l2 * c12, l2 * c12]])

    def gravity_torque(self, theta=None) -> np.ndarray:
        """Joint torques that cancel gravity, ``dU/dtheta``."""
        t1, t2 = self.theta if theta is None else theta
        l1, l2 = self.lengths
        m1, m2 = self.masses
        g = np.asarray(self.gravity[:2], dtype=float)
        s1, c1 = math.sin(t1), math.cos(t1)
        s12, c12 = math.sin(t1 + t2), math.cos(t1 + t2)
        Jc1 = np.array([[-0.5 * l1 * s1, 0.0], [0.5 * l1 * c1, 0.0]])
        Jc2 = np.array([[-l1 * s1 - 0.5 * l2 * s12, -0.5 * l2 * s12],
                        [l1 * c1 + 0.5 * l2 * c12, 0.5 * l2 * c12]])
        return -(m1 * Jc1.T @ g + m2 * Jc2.T @ g)

    def tip_pose(self) -> Pose:
        x, y = self.forward_kinematics()
        yaw = self.theta[0] + self.theta[1]
        return Pose([x, y, 0.0], [math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)])

    def tip_twist(self) -> np.ndarray:
        v = self.jacobian() @ np.asarray(self.theta_dot)
        return np.array([v[0], v[1], 0.0, 0.0, 0.0, self.theta_dot[0] + self.theta_dot[1]])


def joint_torque_command(model: ChainModel, x_d: Pose, xdot_d, p: ImpedanceParams) -> np.ndarray:
    """``J^T F_imp + g(theta)`` with the in-plane force components of ``F_imp``."""
    F = impedance_wrench(x_d, xdot_d, model.tip_pose(), model.tip_twist(), p)
    return model.jacobian().T @ F.f[:2] + model.gravity_torque()


@dataclass(frozen=True)
class WrenchEstimate:
    wrench: Wrench
    rank: int
    singular_values: tuple

    @property
    def singular(self) -> bool:
        return self.rank < len(self.singular_values)


def estimate_external_wrench(model: ChainModel, tau_ext, rcond: float = 1e-10) -> WrenchEstimate:
    """Least-squares ``F = (J^T)^+ tau``; minimum-norm at singular configurations."""
    JT = model.jacobian().T
    F, _, rank, sv = np.linalg.lstsq(JT, np.asarray(tau_ext, dtype=float), rcond=rcond)
    return WrenchEstimate(Wrench([F[0], F[1], 0.0]), int(rank), tuple(float(s) for s in sv))


# ---------------------------------------------------------------------------
# 6-DOF virtual body
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TaskSpaceBody:
    """Rigid body driven in task space.

    ``twist`` is ``[v, omega]`` in the world frame.  Inertia is treated as a
    diagonal world-frame tensor and gyroscopic coupling is neglected.
    """

    mass: float = 1.0
    inertia: tuple = (0.01, 0.01, 0.01)
    pose: Pose = field(default_factory=lambda: Pose(np.zeros(3)))
    twist: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        if not self.mass > 0.0:
            raise ValueError("mass must be positive")
        inertia = tuple(float(i) for i in self.inertia)
        if len(inertia) != 3 or min(inertia) <= 0.0:
            raise ValueError("inertia components must be positive")
        tw = np.array(self.twist, dtype=float).reshape(6)
        tw.setflags(write=False)
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "twist", tw)

    @property
    def mass_diag(self) -> np.ndarray:
        m = self.mass
        return np.array([m, m, m, *self.inertia])


def integrate_pose(pose: Pose, twist, dt: float) -> Pose:
    twist = np.asarray(twist, dtype=float)
    dq = quat_from_rotvec(twist[3:] * dt)
    return Pose(pose.p + twist[:3] * dt, qmul(dq, pose.q))


def step_task_body(body: TaskSpaceBody, command_wrench: Wrench, external_wrench: Wrench,
                   dt: float) -> TaskSpaceBody:
    """One semi-implicit Euler step: velocity first, then pose with the new velocity."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    acc = (command_wrench.as_array() + external_wrench.as_array()) / body.mass_diag
    twist = body.twist + acc * dt
    twist.setflags(write=False)
    # skip revalidation: mass and inertia are unchanged and twist is fresh
    out = object.__new__(TaskSpaceBody)
    object.__setattr__(out, "mass", body.mass)
    object.__setattr__(out, "inertia", body.inertia)
    object.__setattr__(out, "pose", integrate_pose(body.pose, twist, dt))
    object.__setattr__(out, "twist", twist)
    return out


def storage_function(body: TaskSpaceBody, x_d: Pose, p: ImpedanceParams) -> float:
    """``0.5 e^T K e + 0.5 twist^T M twist`` for a constant setpoint."""
    e = pose_error(x_d, body.pose)
    tw = body.twist
    return float(0.5 * e @ p.K @ e + 0.5 * tw @ (body.mass_diag * tw))


def passivity_dt_bound(k: float, c: float, m: float) -> float:
    """Largest step for which semi-implicit Euler never increases the storage.

    For one spring-damper axis the one-step change of ``k x^2/2 + m v^2/2`` is
    a quadratic form in ``(x, v)`` that is negative semidefinite exactly when
    ``dt <= sqrt(m/k)`` and ``dt <= 2 c m / (c^2 + k m)``.  At critical damping
    this is ``0.8 / omega_n``.
    """
    if k <= 0.0:
        return math.inf if c == 0.0 else 2.0 * m / c
    return min(math.sqrt(m / k), 2.0 * c * m / (c * c + k * m))


def regulate(body: TaskSpaceBody, x_d: Pose, p: ImpedanceParams, dt: float, steps: int,
             external=None):
    """Run the impedance loop to a fixed setpoint.

    Yields ``(body, V)`` after each step, where ``V`` is
    :func:`storage_function` of the new state.  The pose error is shared
    between the storage and the next command.
    """
    ext = external or Wrench()
    M = body.mass_diag
    e = pose_error(x_d, body.pose)
    for _ in range(steps):
        cmd = Wrench.from_array(p.K @ e - p.D @ body.twist)
        body = step_task_body(body, cmd, ext, dt)
        e = pose_error(x_d, body.pose)
        tw = body.twist
        yield body, float(0.5 * e @ p.K @ e + 0.5 * tw @ (M * tw))
