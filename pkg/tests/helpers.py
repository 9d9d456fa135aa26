"""Shared hypothesis strategies and random generators for the tests."""

import numpy as np
from hypothesis import strategies as st

from terdagger.geometry import Pose

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


@st.composite
def unit_quats(draw):
    v = np.array(draw(st.tuples(*[st.floats(-1.0, 1.0, allow_nan=False)] * 4)))
    if np.linalg.norm(v) < 1e-3:
        v = np.array([1.0, 0.0, 0.0, 0.0])
    return v / np.linalg.norm(v)


@st.composite
def poses(draw):
    return Pose(draw(vec3), draw(unit_quats()))


def random_quat(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_pose(rng, scale=1.0) -> Pose:
    return Pose(rng.normal(scale=scale, size=3), random_quat(rng))



# random records for serialization round trips

def random_wrench(rng, scale=10.0):
    from terdagger.geometry import Wrench
    return Wrench(rng.normal(scale=scale, size=3), rng.normal(scale=scale / 10, size=3))


def random_trajectory(rng, with_wrenches=None):
    from terdagger.geometry import Trajectory
    n = int(rng.integers(1, 30))
    dt = float(rng.choice([0.001, 0.02, 0.1, rng.uniform(1e-3, 1.0)]))
    if with_wrenches is None:
        with_wrenches = bool(rng.integers(2))
    poses = [random_pose(rng, 10 ** rng.uniform(-4, 1)) for _ in range(n)]
    wrenches = [random_wrench(rng) for _ in range(n)] if with_wrenches else None
    return Trajectory(poses, dt, wrenches)


def random_samples(rng):
    from terdagger.residuals import Region, Residual, ResidualSample
    regions = list(Region)
    return [ResidualSample(random_pose(rng), random_pose(rng),
                           Residual(rng.normal(scale=0.01, size=3), random_quat(rng)),
                           regions[int(rng.integers(len(regions)))], int(rng.integers(0, 500)))
            for _ in range(int(rng.integers(1, 20)))]


def random_scores(rng):
    from terdagger.detector import LabeledEpisode
    n = int(rng.integers(1, 50))
    return LabeledEpisode(tuple(float(x) for x in np.abs(rng.normal(scale=5.0, size=n))),
                          bool(rng.integers(2)))


def random_metrics(rng):
    from terdagger.sim.benchmark import COLUMNS
    rows = []
    for i in range(int(rng.integers(1, 6))):
        row = {}
        for c in COLUMNS:
            if c in ("config", "regions"):
                row[c] = f"{c}-{i}-{int(rng.integers(1000))}"
            elif c in ("n_points", "episodes", "n_samples"):
                row[c] = int(rng.integers(0, 10000))
            else:
                row[c] = float(rng.choice([rng.uniform(0, 1), rng.normal(scale=1e3), float("nan")]))
        rows.append(row)
    return rows


def random_episode_log(rng):
    from terdagger.sim.episode import EpisodeLog, Mode, Outcome, StepRecord
    n = int(rng.integers(1, 40))
    cut = sorted(int(x) for x in rng.integers(0, n + 1, size=2))
    records = []
    for i in range(n):
        mode = Mode.AUTO if i < cut[0] else Mode.PAUSED if i < cut[1] else Mode.CORRECTED
        records.append(StepRecord(i * 0.02, mode, random_pose(rng), random_pose(rng),
                                  random_wrench(rng), random_wrench(rng),
                                  float(abs(rng.normal())), float(abs(rng.normal())),
                                  0.0 if mode is Mode.PAUSED else 1500.0))
    trigger = cut[0] - 1 if cut[1] > cut[0] and cut[0] > 0 else None
    outcome = list(Outcome)[int(rng.integers(3))]
    metrics = {"k_star": int(rng.integers(100)), "objective": float(rng.normal())}
    header = {"seed": 3, "mode": "ter", "scene": {"rng_seed": 3, "socket_center": [0.5, 0.0, 0.0]}}
    log = EpisodeLog(int(rng.integers(10 ** 6)), records, outcome, trigger,
                     metrics["k_star"] if trigger is not None else None,
                     20 if trigger is not None else None, header, metrics)
    if rng.integers(2):
        log.base_plan = random_trajectory(rng, with_wrenches=False)
        log.demo = random_trajectory(rng, with_wrenches=False)
        log.corrected = random_trajectory(rng, with_wrenches=False)
    return log


def same_floats(a, b) -> bool:
    """Bitwise equality of float sequences, treating NaN as equal to NaN."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


# every optimizer trace seen in the session, filled by conftest
TRACE_LOG = {"runs": 0, "violations": []}

# acceptance criterion bookkeeping, reported in the terminal summary
ACCEPTANCE_RESULTS = []


class criterion:
    """Context manager recording one PASS/FAIL line per acceptance criterion.

    Fill ``notes`` with measured values; the line is recorded even when an
    assertion inside the block fails.
    """

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.notes = {}

    def __enter__(self):
        import time
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        import time
        elapsed = time.perf_counter() - self._t0
        status = "PASS" if exc_type is None else "FAIL"
        notes = ", ".join(f"{k}={v}" for k, v in self.notes.items())
        line = f"[{status}] criterion {self.number}: {self.title} ({notes}; {elapsed:.2f}s)"
        ACCEPTANCE_RESULTS.append((self.number, line))
        print(line)
        return False
