"""Local trajectory editing.

A window of ``N + 1`` base poses ending at the alignment index ``k*`` is
re-optimized so that it ends on the first pose of a corrective
demonstration, then the corrected trajectory is stitched together as
``base prefix ++ edited window ++ demo[1:]``.

The objective is fidelity to the base window, smoothness between consecutive
poses (weighted by ``lambda_s``) and an endpoint term (weighted by
``lambda_e``).  Positions and orientations decouple: positions give a
symmetric tridiagonal linear system, orientations are handled by projected
gradient descent on the unit sphere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from .geometry import (
    IDENTITY_QUAT,
    Pose,
    Trajectory,
    position_distance,
    qconj,
    qmul,
    quat_slerp,
    quaternion_distance,
    resample,
)

log = logging.getLogger(__name__)

SMOOTHNESS_MODES = ("relative", "absolute")


@dataclass(frozen=True)
class EditWeights:
    lambda_s: float = 1.0
    lambda_e: float = 1000.0
    lambda_qf: float = 0.5
    lambda_qs: float = 0.5
    lambda_qe: float = 0.5

    def __post_init__(self):
        for name in ("lambda_s", "lambda_e", "lambda_qf", "lambda_qs", "lambda_qe"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.lambda_e > 0.0:
            raise ValueError("lambda_e must be positive")


@dataclass(frozen=True)
class EditConfig:
    """Settings for :func:`optimize_segment`.

    ``smoothness="relative"`` penalizes changes of the per-step motion
    relative to the base window, ``||(p_i - p_{i-1}) - (b_i - b_{i-1})||^2``
    (and the analogous rotation term on the orientation corrections), so an
    edit with nothing to correct returns the base window unchanged.
    ``"absolute"`` penalizes the raw step ``||p_i - p_{i-1}||^2``.
    """

    n_points: int = 20
    weights: EditWeights = field(default_factory=EditWeights)
    hard_endpoint: bool = True
    max_iters: int = 200
    grad_tol: float = 1e-8
    smoothness: str = "relative"

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.smoothness not in SMOOTHNESS_MODES:
            raise ValueError(f"smoothness must be one of {SMOOTHNESS_MODES}")


@dataclass
class EditResult:
    segment: Trajectory
    objective_trace: list
    endpoint_error: tuple
    start: int
    n_effective: int
    iterations: int = 0
    converged: bool = True
    grad_norm: float = 0.0

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


# ---------------------------------------------------------------------------
# position subproblem
# ---------------------------------------------------------------------------

def _position_objective(Y, A, S, h, lam_s, lam_e):
    fid = np.sum((Y - A) ** 2)
    smooth = np.sum((Y[1:] - Y[:-1] - S[1:]) ** 2) if len(Y) > 1 else 0.0
    end = np.sum((Y[-1] - h) ** 2)
    return float(fid + lam_s * smooth + lam_e * end)


def solve_positions(A: np.ndarray, S: np.ndarray, h: np.ndarray, lam_s: float,
                    lam_e: float, hard: bool) -> np.ndarray:
    """Minimize the position objective over an ``(N+1, 3)`` window.

    ``A`` holds fidelity targets, ``S[i]`` the desired step ``y_i - y_{i-1}``
    (``S[0]`` unused) and ``h`` the endpoint.  With ``hard`` the last row is
    pinned to ``h`` and eliminated.
    """
    N = len(A) - 1
    n = N if hard else N + 1
    Y = np.empty_like(A, dtype=float)
    if hard:
        Y[N] = h
    if n == 0:
        return Y
    diag = np.full(n, 1.0 + lam_s)
    diag[1:] += lam_s
    rhs = A[:n].copy()
    # d/dy_i of lam_s * ||y_i - y_{i-1} - s_i||^2 and of the (i+1) term
    rhs[1:n] += lam_s * S[1:n]
    rhs[: min(n, N)] -= lam_s * S[1:min(n, N) + 1]
    if hard:
        rhs[n - 1] += lam_s * h
    else:
        diag[N] = 1.0 + lam_s + lam_e
        rhs[N] += lam_e * h
        if N == 0:
            diag[0] = 1.0 + lam_e
    if n == 1:
        # LAPACK ptsv rejects a 1x1 tridiagonal system
        Y[0] = rhs[0] / diag[0]
        return Y
    ab = np.zeros((2, n))
    ab[0, 1:] = -lam_s
    ab[1] = diag
    Y[:n] = solveh_banded(ab, rhs)
    return Y


# ---------------------------------------------------------------------------
# orientation subproblem
# ---------------------------------------------------------------------------

def _abs_dot_terms(X, anchors):
    # 1 - |<x, a>| == ||x - sgn(<x, a>) a||^2 / 2 for unit x, a; the chord form
    # keeps resolution below 1e-8 rad where 1 - cos rounds to zero
    s = _sgn(np.einsum("ij,ij->i", X, anchors))[:, None]
    return 0.5 * np.sum((X - s * anchors) ** 2, axis=1)


def _orientation_objective(X, anchors, h, wf, ws, we):
    val = wf * np.sum(_abs_dot_terms(X, anchors))
    if len(X) > 1:
        val += ws * np.sum(_abs_dot_terms(X[1:], X[:-1]))
    val += we * _abs_dot_terms(X[-1:], h[None, :])[0]
    return float(val)


def _sgn(d):
    # subgradient choice at <x, a> = 0 is +1
    return np.where(d >= 0.0, 1.0, -1.0)


def _orientation_gradient(X, anchors, h, wf, ws, we):
    G = -wf * _sgn(np.einsum("ij,ij->i", X, anchors))[:, None] * anchors
    if len(X) > 1:
        s = _sgn(np.einsum("ij,ij->i", X[1:], X[:-1]))[:, None]
        G[1:] -= ws * s * X[:-1]
        G[:-1] -= ws * s * X[1:]
    G[-1] -= we * (1.0 if X[-1] @ h >= 0.0 else -1.0) * h
    return G


def solve_orientations(X0, anchors, h, wf, ws, we, hard, max_iters, grad_tol,
                       offset=0.0):
    """Projected gradient descent on a product of unit 3-spheres.

    Returns ``(X, trace, iterations, converged, grad_norm)``; ``trace`` holds
    ``offset + objective`` per accepted iterate and never increases.
    """
    X = np.array(X0, dtype=float)
    free = slice(0, len(X) - 1) if hard else slice(0, len(X))
    f = _orientation_objective(X, anchors, h, wf, ws, we)
    trace = [offset + f]
    step = 1.0
    gnorm = 0.0
    it = 0
    for it in range(1, max_iters + 1):
        G = _orientation_gradient(X, anchors, h, wf, ws, we)
        T = np.zeros_like(G)
        Xf = X[free]
        T[free] = G[free] - np.einsum("ij,ij->i", G[free], Xf)[:, None] * Xf
        gnorm = float(np.linalg.norm(T))
        if gnorm <= grad_tol:
            return X, trace, it - 1, True, gnorm
        accepted = False
        while step > 1e-12:
            Xn = X.copy()
            Xn[free] = Xf - step * T[free]
            Xn[free] /= np.linalg.norm(Xn[free], axis=1)[:, None]
            fn = _orientation_objective(Xn, anchors, h, wf, ws, we)
            if fn <= f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no representable descent left
            return X, trace, it, gnorm <= grad_tol, gnorm
        X, f = Xn, fn
        trace.append(offset + f)
        step = min(step * 2.0, 8.0)
    G = _orientation_gradient(X, anchors, h, wf, ws, we)
    Xf = X[free]
    T = G[free] - np.einsum("ij,ij->i", G[free], Xf)[:, None] * Xf
    gnorm = float(np.linalg.norm(T))
    return X, trace, it, gnorm <= grad_tol, gnorm


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def effective_window(k_star: int, n_points: int) -> tuple[int, int]:
    """``(start, N)`` of the editable window; N is clamped to ``k_star``."""
    N = min(n_points, k_star)
    return k_star - N, N


def optimize_segment(base: Trajectory, k_star: int, human_start: Pose,
                     cfg: EditConfig | None = None) -> EditResult:
    cfg = cfg or EditConfig()
    if len(base) < 2:
        raise ValueError("base trajectory needs at least 2 poses")
    if not 0 <= k_star < len(base):
        raise IndexError(f"k_star {k_star} outside [0, {len(base)})")
    w = cfg.weights
    start, N = effective_window(k_star, cfg.n_points)
    if N < cfg.n_points:
        log.debug("edit window clamped from %d to %d points", cfg.n_points, N)

    B = base.positions[start:k_star + 1]
    QB = base.quaternions[start:k_star + 1]
    if cfg.smoothness == "relative":
        S = np.zeros_like(B)
        S[1:] = np.diff(B, axis=0)
    else:
        S = np.zeros_like(B)
    Y = solve_positions(B, S, human_start.p, w.lambda_s, w.lambda_e, cfg.hard_endpoint)
    pos_obj = _position_objective(Y, B, S, human_start.p, w.lambda_s, w.lambda_e)

    wf, ws, we = w.lambda_qf, w.lambda_s * w.lambda_qs, w.lambda_e * w.lambda_qe
    ts = np.linspace(0.0, 1.0, N + 1) if N > 0 else np.array([1.0])
    if cfg.smoothness == "relative":
        # optimize the corrections r_i with q_i = r_i * qb_i
        anchors = np.tile(IDENTITY_QUAT, (N + 1, 1))
        h = qmul(human_start.q, qconj(QB[-1]))
        X0 = np.array([quat_slerp(IDENTITY_QUAT, h, t) for t in ts])
    else:
        anchors = QB
        h = human_start.q
        X0 = np.array([quat_slerp(QB[0], h, t) for t in ts])
    if cfg.hard_endpoint:
        X0[-1] = h
    X, trace, iters, converged, gnorm = solve_orientations(
        X0, anchors, h, wf, ws, we, cfg.hard_endpoint, cfg.max_iters, cfg.grad_tol,
        offset=pos_obj)
    if not converged:
        log.info("orientation solve stopped after %d iterations, |grad|=%.3g", iters, gnorm)
    if cfg.smoothness == "relative":
        Q = np.array([qmul(r, qb) for r, qb in zip(X, QB)])
    else:
        Q = X

    poses = [Pose(p, q) for p, q in zip(Y, Q)]
    if cfg.hard_endpoint:
        poses[-1] = human_start
    segment = Trajectory(poses, base.dt)
    err = (position_distance(poses[-1], human_start), quaternion_distance(poses[-1], human_start))
    return EditResult(segment, trace, err, start, N, iters, converged, gnorm)


def assemble_corrected(base: Trajectory, k_star: int, segment: Trajectory,
                       human: Trajectory, N: int, tol: float = 1e-6) -> Trajectory:
    """Concatenate ``base[:k*-N] ++ segment ++ human[1:]``.

    The demonstration is resampled onto the base time step first.
    """
    if N > k_star:
        raise ValueError(f"N={N} exceeds k*={k_star}; clamp the window first")
    if len(segment) != N + 1:
        raise ValueError(f"segment has {len(segment)} poses, expected N+1={N + 1}")
    if human.dt != base.dt:
        human = resample(human, base.dt)
    gap = position_distance(segment[-1], human[0])
    if gap > tol:
        raise ValueError(f"segment endpoint is {gap:.3g} m from the demonstration start")
    poses = list(base.poses[:k_star - N]) + list(segment.poses) + list(human.poses[1:])
    return Trajectory(poses, base.dt)
