"""Closed-loop insertion episodes.

An episode executes the scripted policy through the impedance-controlled
body (1 kHz physics, 50 Hz commands with zero-order hold).  In ``ter`` mode
a detector trigger pauses execution with the stiffness set to zero, a
corrective demonstration is synthesized, the base plan is edited into it,
residual samples are emitted and the corrected trajectory is replayed from
the start pose.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree

from ..alignment import AlignmentWeights, nearest_point
from ..detector import DetectorConfig, Metric, StreamingDetector, detect
from ..editor import EditConfig, assemble_corrected, optimize_segment
from ..geometry import Pose, Trajectory, Wrench, pose_steps, quat_slerp
from ..residuals import ALL_REGIONS, Residual, ResidualSample, generate_samples
from .policy import PolicyConfig, ScriptedBasePolicy, corrective_demo, start_pose
from .scene import SceneConfig, contact_force


class Mode(str, enum.Enum):
    AUTO = "auto"
    PAUSED = "paused"
    CORRECTED = "corrected"


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    JAM = "jam"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ControllerConfig:
    """Impedance gains, virtual body and loop rates."""

    k_trans: float = 1500.0
    k_rot: float = 50.0
    zeta: float = 1.0
    mass: float = 1.0
    inertia: float = 0.005
    physics_dt: float = 0.001
    control_dt: float = 0.02
    hand_stiffness: float = 1500.0
    hand_rot_stiffness: float = 50.0
    retreat_speed: float = 0.1
    settle_time: float = 0.3

    @property
    def d_trans(self) -> float:
        return 2.0 * self.zeta * math.sqrt(self.k_trans * self.mass)

    @property
    def d_rot(self) -> float:
        return 2.0 * self.zeta * math.sqrt(self.k_rot * self.inertia)

    @property
    def substeps(self) -> int:
        n = int(round(self.control_dt / self.physics_dt))
        if n < 1 or abs(n * self.physics_dt - self.control_dt) > 1e-12:
            raise ValueError("control_dt must be an integer multiple of physics_dt")
        return n


@dataclass(frozen=True, eq=False)
class StepRecord:
    t: float
    mode: Mode
    commanded: Pose
    measured: Pose
    predicted_wrench: Wrench
    measured_wrench: Wrench
    score: float
    position_score: float
    stiffness: float


@dataclass(eq=False)
class EpisodeLog:
    seed: int
    records: list = field(default_factory=list)
    outcome: Outcome = Outcome.TIMEOUT
    trigger_step: int | None = None
    k_star: int | None = None
    n_points: int | None = None
    header: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    # trajectories kept for export; not part of the per-step table
    base_plan: Trajectory | None = None
    demo: Trajectory | None = None
    corrected: Trajectory | None = None

    @property
    def interventions(self) -> int:
        return int(any(r.mode is Mode.PAUSED for r in self.records))

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.SUCCESS

    def scores(self, mode: Mode | None = Mode.AUTO, metric: Metric = Metric.FORCE) -> list:
        key = "score" if metric is Metric.FORCE else "position_score"
        return [getattr(r, key) for r in self.records if mode is None or r.mode is mode]


@dataclass
class EpisodeResult:
    log: EpisodeLog
    samples: list


class ResidualLookup:
    """Nearest-state residual corrector over aggregated samples.

    States are keyed relative to the believed socket position stored in each
    sample's observation, and matched with ``d_p + weight_q * d_q``.  A KD-tree
    on positions narrows the candidates; the full metric picks the winner.
    """

    def __init__(self, samples: Iterable[ResidualSample], weight_q: float = 0.5):
        samples = list(samples)
        if not samples:
            raise ValueError("no samples to build a lookup from")
        self.weight_q = weight_q
        rel = []
        for s in samples:
            belief = np.zeros(3) if s.observation is None else np.asarray(s.observation["belief"])
            rel.append(s.state.p - belief)
        self.P = np.array(rel)
        self.Q = np.array([s.state.q for s in samples])
        self.R = np.array([s.residual.as_array() for s in samples])
        self.tree = cKDTree(self.P)
        self.size = len(samples)

    def lookup_index(self, p_rel, q) -> int:
        d0, i0 = self.tree.query(p_rel)
        q = np.asarray(q)
        best = d0 + self.weight_q * (1.0 - abs(float(self.Q[i0] @ q)))
        cand = np.array(sorted(self.tree.query_ball_point(p_rel, best + 1e-12)))
        if len(cand) == 0:
            return int(i0)
        D = np.linalg.norm(self.P[cand] - p_rel, axis=1) + self.weight_q * (1.0 - np.abs(self.Q[cand] @ q))
        return int(cand[int(np.argmin(D))])

    def lookup(self, state: Pose, belief) -> Residual:
        r = self.R[self.lookup_index(state.p - np.asarray(belief), state.q)]
        return Residual(r[:3], r[3:])


# ---------------------------------------------------------------------------
# fast body simulation
# ---------------------------------------------------------------------------

class _Body:
    """Task-space body state as plain floats, stepped at the physics rate."""

    def __init__(self, pose: Pose, ctrl: ControllerConfig, scene: SceneConfig):
        self.ctrl = ctrl
        self.scene = scene
        self.reset(pose)

    def reset(self, pose: Pose):
        self.p = [float(x) for x in pose.p]
        self.q = [float(x) for x in pose.q]
        self.v = [0.0, 0.0, 0.0]
        self.w = [0.0, 0.0, 0.0]

    def pose(self) -> Pose:
        return Pose(self.p, self.q)

    def contact(self):
        p, v = self.p, self.v
        return contact_force(self.scene, p[0], p[1], p[2], v[0], v[1], v[2])

    def advance(self, n, cp, cq, fv, fw, kt, kr, hand=None):
        """``n`` semi-implicit Euler steps towards command ``(cp, cq)``.

        ``hand = (ref_p, ref_q, k_lin, k_rot)`` adds a guiding spring that is
        external to the controller.
        """
        c = self.ctrl
        dt = c.physics_dt
        dtt, drr = c.d_trans, c.d_rot
        im, ii = 1.0 / c.mass, 1.0 / c.inertia
        p, q, v, w = self.p, self.q, self.v, self.w
        scene = self.scene
        a0, a1, a2, a3 = cq
        for _ in range(n):
            b0, b1, b2, b3 = q
            r0, r1, r2, r3 = _rotvec_of_relative(a0, a1, a2, a3, b0, b1, b2, b3)
            fcx, fcy, fcz = contact_force(scene, p[0], p[1], p[2], v[0], v[1], v[2])
            fx = kt * (cp[0] - p[0]) + dtt * (fv[0] - v[0]) + fcx
            fy = kt * (cp[1] - p[1]) + dtt * (fv[1] - v[1]) + fcy
            fz = kt * (cp[2] - p[2]) + dtt * (fv[2] - v[2]) + fcz
            tx = kr * r1 + drr * (fw[0] - w[0])
            ty = kr * r2 + drr * (fw[1] - w[1])
            tz = kr * r3 + drr * (fw[2] - w[2])
            if hand is not None:
                hp, hq, hk, hkr = hand
                fx += hk * (hp[0] - p[0])
                fy += hk * (hp[1] - p[1])
                fz += hk * (hp[2] - p[2])
                _, h1, h2, h3 = _rotvec_of_relative(hq[0], hq[1], hq[2], hq[3], b0, b1, b2, b3)
                tx += hkr * h1
                ty += hkr * h2
                tz += hkr * h3
            v[0] += fx * im * dt
            v[1] += fy * im * dt
            v[2] += fz * im * dt
            p[0] += v[0] * dt
            p[1] += v[1] * dt
            p[2] += v[2] * dt
            w[0] += tx * ii * dt
            w[1] += ty * ii * dt
            w[2] += tz * ii * dt
            self.q = q = _integrate_quat(q, w, dt)


def _rotvec_of_relative(a0, a1, a2, a3, b0, b1, b2, b3):
    """Rotation vector of ``a * conj(b)``; the leading 0.0 pads to 4 values."""
    ew = a0 * b0 + a1 * b1 + a2 * b2 + a3 * b3
    ex = -a0 * b1 + a1 * b0 - a2 * b3 + a3 * b2
    ey = -a0 * b2 + a1 * b3 + a2 * b0 - a3 * b1
    ez = -a0 * b3 - a1 * b2 + a2 * b1 + a3 * b0
    if ew < 0.0:
        ew, ex, ey, ez = -ew, -ex, -ey, -ez
    s = math.sqrt(ex * ex + ey * ey + ez * ez)
    f = 2.0 / ew if s < 1e-12 else 2.0 * math.atan2(s, ew) / s
    return 0.0, f * ex, f * ey, f * ez


def _integrate_quat(q, w, dt):
    wx, wy, wz = w
    th = math.sqrt(wx * wx + wy * wy + wz * wz) * dt
    if th < 1e-15:
        return q
    s = math.sin(0.5 * th) / (th / dt)
    d0, d1, d2, d3 = math.cos(0.5 * th), wx * s, wy * s, wz * s
    b0, b1, b2, b3 = q
    r0 = d0 * b0 - d1 * b1 - d2 * b2 - d3 * b3
    r1 = d0 * b1 + d1 * b0 + d2 * b3 - d3 * b2
    r2 = d0 * b2 - d1 * b3 + d2 * b0 + d3 * b1
    r3 = d0 * b3 + d1 * b2 - d2 * b1 + d3 * b0
    n = math.sqrt(r0 * r0 + r1 * r1 + r2 * r2 + r3 * r3)
    return [r0 / n, r1 / n, r2 / n, r3 / n]


def _ff_twist(a: Pose, b: Pose, dt: float):
    """Feed-forward twist taking ``a`` to ``b`` in ``dt``."""
    v = (b.p - a.p) / dt
    _, r1, r2, r3 = _rotvec_of_relative(*b.q, *a.q)
    return v.tolist(), [r1 / dt, r2 / dt, r3 / dt]


# ---------------------------------------------------------------------------
# episode
# ---------------------------------------------------------------------------

class _Runner:
    def __init__(self, scene: SceneConfig, socket, policy: ScriptedBasePolicy,
                 detector: DetectorConfig, ctrl: ControllerConfig, noise_rng, log: EpisodeLog):
        self.nominal = scene
        self.scene = scene.with_socket(socket)
        self.policy = policy
        self.detector = detector
        self.ctrl = ctrl
        self.noise_rng = noise_rng
        self.log = log
        self.body = _Body(policy.start, ctrl, self.scene)
        self.tick = 0
        self.max_ticks = int(round(scene.max_time / ctrl.control_dt))
        self.jam_ticks = max(1, int(round(scene.jam_window / ctrl.control_dt)))

    def measure(self, base_action: Pose, hand_force=(0.0, 0.0, 0.0)):
        """Per-tick measurement: pose, wrenches and both detector scores."""
        x = self.body.pose()
        fc = self.body.contact()
        sc = self.nominal
        nf = self.noise_rng.normal(0.0, sc.force_noise, 3) if sc.force_noise > 0 else np.zeros(3)
        nt = self.noise_rng.normal(0.0, sc.torque_noise, 3) if sc.torque_noise > 0 else np.zeros(3)
        meas = Wrench(np.add(fc, hand_force) + nf, nt)
        pred = Wrench(self.policy.expected_contact(float(x.p[2])))
        score = float(np.sum(np.abs(pred.as_array() - meas.as_array())))
        pos_score = float(np.linalg.norm(base_action.p - x.p))
        return x, fc, pred, meas, score, pos_score

    def record(self, mode, cmd, x, pred, meas, score, pos_score, stiffness):
        self.log.records.append(StepRecord(self.tick * self.ctrl.control_dt, mode, cmd, x, pred, meas,
                                           score, pos_score, stiffness))
        self.tick += 1

    def check(self, depths, forces) -> Outcome | None:
        if depths[-1] >= self.nominal.insertion_depth_success:
            return Outcome.SUCCESS
        n = self.jam_ticks
        if len(depths) > n:
            progress = depths[-1] - depths[-1 - n]
            if progress < self.nominal.jam_progress and min(forces[-n:]) > self.nominal.jam_force:
                return Outcome.JAM
        return None

    def run_commands(self, mode: Mode, actions, start_index: int, detector_live: bool,
                     residual_model=None):
        """Track ``actions[start_index + j + 1]`` each tick until an outcome or trigger.

        Returns ``(outcome, trigger_tick)``; exactly one is not None, except on
        timeout where ``outcome`` is TIMEOUT.
        """
        ctrl = self.ctrl
        n = len(actions)
        det = StreamingDetector(self.detector)
        depths, forces = [], []
        kt, kr = ctrl.k_trans, ctrl.k_rot
        belief = self.policy.belief
        for j in range(self.max_ticks):
            i = start_index + j
            a_now = actions[min(i, n - 1)]
            a_next = actions[min(i + 1, n - 1)]
            x, fc, pred, meas, score, pos_score = self.measure(a_next)
            cmd = a_next
            if residual_model is not None:
                r = residual_model.lookup(x, belief)
                cmd = Pose(a_next.p + r.dp, _qmul_list(r.dq, a_next.q))
            self.record(mode, cmd, x, pred, meas, score, pos_score, kt)
            depths.append(self.scene.depth(x.p))
            forces.append(math.sqrt(fc[0] ** 2 + fc[1] ** 2 + fc[2] ** 2))
            out = self.check(depths, forces)
            if out is not None:
                return out, None
            fired = det.update(score if self.detector.metric is Metric.FORCE else pos_score)
            if detector_live and fired:
                return None, self.tick - 1
            fv, fw = _ff_twist(a_now, a_next, ctrl.control_dt) if i + 1 < n else ([0.0] * 3, [0.0] * 3)
            self.body.advance(ctrl.substeps, cmd.p.tolist(), cmd.q.tolist(), fv, fw, kt, kr)
        return Outcome.TIMEOUT, None

    def guide_to(self, target: Pose):
        """Zero-stiffness phase: an external hand spring drags the body to ``target``."""
        ctrl = self.ctrl
        start = self.body.pose()
        dist = float(np.linalg.norm(target.p - start.p))
        n_move = max(1, int(math.ceil(dist / (ctrl.retreat_speed * ctrl.control_dt))))
        n_total = n_move + int(round(ctrl.settle_time / ctrl.control_dt))
        zero = [0.0, 0.0, 0.0]
        for j in range(n_total):
            u = min(1.0, (j + 1) / n_move)
            ref = Pose(start.p + u * (target.p - start.p), quat_slerp(start.q, target.q, u))
            hand = (ref.p.tolist(), ref.q.tolist(), ctrl.hand_stiffness, ctrl.hand_rot_stiffness)
            hand_force = tuple(ctrl.hand_stiffness * (ref.p - np.array(self.body.p)))
            x, _, pred, meas, score, pos_score = self.measure(ref, hand_force)
            self.record(Mode.PAUSED, ref, x, pred, meas, score, pos_score, 0.0)
            self.body.advance(ctrl.substeps, x.p.tolist(), x.q.tolist(), zero, zero, 0.0, 0.0, hand)


def _qmul_list(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return [aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw]


def junction_ratio(corrected: Trajectory, base: Trajectory, k_star: int, N: int, window: int = 2) -> float:
    """Largest step near either splice point over the median base step."""
    steps = pose_steps(corrected)
    med = float(np.median(pose_steps(base)))
    idx = []
    for j in (k_star - N, k_star + 1):
        idx += [i for i in range(j - window, j + window) if 0 <= i < len(steps)]
    if not idx or med == 0.0:
        return 0.0
    return float(steps[idx].max() / med)


def episode_header(scene, policy_cfg, detector, edit_cfg, ctrl, seed, socket, belief, mode) -> dict:
    """Fully resolved configuration as JSON-native values."""
    return json.loads(json.dumps({
        "seed": seed,
        "mode": mode,
        "socket": np.asarray(socket).tolist(),
        "belief": np.asarray(belief).tolist(),
        "scene": asdict(scene),
        "policy": asdict(policy_cfg),
        "detector": {"metric": detector.metric.value, "threshold_c": detector.threshold_c,
                     "debounce_k": detector.debounce_k},
        "edit": {"n_points": edit_cfg.n_points, **asdict(edit_cfg.weights),
                 "hard_endpoint": edit_cfg.hard_endpoint, "max_iters": edit_cfg.max_iters,
                 "grad_tol": edit_cfg.grad_tol, "smoothness": edit_cfg.smoothness},
        "impedance": asdict(ctrl),
    }))


def run_episode(scene: SceneConfig, policy_cfg: PolicyConfig | None = None,
                detector: DetectorConfig | None = None, residual_model: ResidualLookup | None = None,
                edit_cfg: EditConfig | None = None, *, controller: ControllerConfig | None = None,
                mode: str = "ter", regions=ALL_REGIONS,
                alignment: AlignmentWeights | None = None,
                match_weight_q: float = 0.5) -> EpisodeResult:
    """Run one seeded episode (seed = ``scene.rng_seed``).

    ``mode="base"`` never intervenes; ``mode="ter"`` runs the
    detect / pause / correct / edit / replay loop on the first trigger.
    """
    policy_cfg = policy_cfg or PolicyConfig()
    detector = detector or DetectorConfig()
    edit_cfg = edit_cfg or EditConfig()
    ctrl = controller or ControllerConfig()
    if mode not in ("base", "ter"):
        raise ValueError(f"unknown mode {mode!r}")
    seed = scene.rng_seed
    ss = np.random.SeedSequence(seed)
    scene_rng, noise_rng, demo_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    socket = scene.sample_socket(scene_rng)
    true_scene = scene.with_socket(socket)
    policy = ScriptedBasePolicy.for_episode(true_scene, policy_cfg, scene_rng,
                                            start=start_pose(scene), dt=ctrl.control_dt)
    log = EpisodeLog(seed, header=episode_header(scene, policy_cfg, detector, edit_cfg, ctrl,
                                                 seed, socket, policy.belief, mode))
    aw = alignment or AlignmentWeights()
    log.header["edit"].update(omega_p=aw.omega_p, omega_q=aw.omega_q, post_match_weight_q=match_weight_q)
    log.base_plan = policy.plan
    runner = _Runner(scene, socket, policy, detector, ctrl, noise_rng, log)

    outcome, trigger = runner.run_commands(Mode.AUTO, policy.plan.poses, 0, mode == "ter", residual_model)
    if outcome is not None:
        log.outcome = outcome
        # trigger index for offline evaluation even when nobody intervened
        key = log.scores(Mode.AUTO, detector.metric)
        log.trigger_step = detect(key, detector)
        return EpisodeResult(log, [])

    log.trigger_step = trigger
    demo = corrective_demo(true_scene, policy_cfg, ctrl.control_dt, demo_rng)
    runner.guide_to(demo[0])
    plan = policy.plan
    align = nearest_point(plan, demo[0], aw)
    edit = optimize_segment(plan, align.k_star, demo[0], edit_cfg)
    corrected = assemble_corrected(plan, align.k_star, edit.segment, demo, edit.n_effective)
    samples = generate_samples(plan, corrected, edit.segment, demo, align.k_star, edit.n_effective,
                               policy, regions, match_weight_q=match_weight_q,
                               observation={"belief": policy.belief.copy()})
    log.k_star, log.n_points = align.k_star, edit.n_effective
    log.demo, log.corrected = demo, corrected
    log.metrics = {
        "k_star": int(align.k_star),
        "alignment_distance": float(align.distance),
        "endpoint_position_error": float(edit.endpoint_error[0]),
        "endpoint_quaternion_error": float(edit.endpoint_error[1]),
        "iterations": int(edit.iterations),
        "objective": float(edit.objective),
        "junction_ratio": junction_ratio(corrected, plan, align.k_star, edit.n_effective),
    }

    runner.body.reset(policy.start)
    outcome, _ = runner.run_commands(Mode.CORRECTED, corrected.poses, 0, False)
    log.outcome = outcome
    return EpisodeResult(log, samples)
