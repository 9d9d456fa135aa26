"""Seeded episode batches over edit-window sizes and residual-region subsets."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..detector import DetectorConfig, LabeledEpisode, evaluate
from ..editor import EditConfig
from ..residuals import Region
from .episode import ControllerConfig, Mode, ResidualLookup, run_episode
from .policy import PolicyConfig
from .scene import SceneConfig

T, D, P = Region.TRANSITION, Region.HUMAN_DEMO, Region.POST_EDIT

# ablation rows; pre-edit samples are always kept
REGION_ROWS = {
    "base": frozenset(),
    "T": frozenset({T}),
    "D": frozenset({D}),
    "P": frozenset({P}),
    "T+D": frozenset({T, D}),
    "T+P": frozenset({T, P}),
    "D+P": frozenset({D, P}),
    "all": frozenset({T, D, P}),
}
N_GRID = (10, 20, 30, 40)

COLUMNS = ("config", "n_points", "regions", "episodes", "success_base", "success_ter",
           "success_residual", "mean_interventions", "precision", "recall",
           "junction_ratio_mean", "junction_ratio_max", "n_samples")


@dataclass(frozen=True)
class GridPoint:
    label: str
    n_points: int
    regions: frozenset = field(default_factory=lambda: frozenset({T, D, P}))

    @property
    def sample_regions(self) -> frozenset:
        return self.regions | {Region.PRE_EDIT} if self.regions else frozenset()

    @property
    def region_string(self) -> str:
        if not self.regions:
            return "none"
        return "+".join(r.value for r in Region if r in self.sample_regions)


def make_grid(n_grid=N_GRID, region_grid=tuple(REGION_ROWS), region_n: int = 20) -> list:
    grid = [GridPoint(f"N={n}", int(n)) for n in n_grid]
    grid += [GridPoint(f"regions={name}", region_n, REGION_ROWS[name]) for name in region_grid]
    return grid


@dataclass(frozen=True)
class BenchmarkSetup:
    scene: SceneConfig = field(default_factory=SceneConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    edit: EditConfig = field(default_factory=EditConfig)
    seed: int = 0


def _episode(args):
    setup, seed, mode, edit, regions, lookup, clean = args
    policy = replace(setup.policy, belief_bias=(0.0, 0.0, 0.0)) if clean else setup.policy
    res = run_episode(replace(setup.scene, rng_seed=seed), policy, setup.detector, lookup, edit,
                      controller=setup.controller, mode=mode, regions=regions)
    log = res.log
    return {
        "success": log.success,
        "interventions": log.interventions,
        "samples": res.samples,
        "junction_ratio": log.metrics.get("junction_ratio"),
        "scores": log.scores(Mode.AUTO, setup.detector.metric),
    }


class _Pool:
    def __init__(self, workers: int):
        self.ex = ProcessPoolExecutor(workers) if workers > 1 else None

    def map(self, fn, items):
        items = list(items)
        if self.ex is None:
            return [fn(x) for x in items]
        return list(self.ex.map(fn, items, chunksize=max(1, len(items) // 32)))

    def close(self):
        if self.ex is not None:
            self.ex.shutdown()


def run_benchmark(n_episodes: int, grid=None, setup: BenchmarkSetup | None = None,
                  workers: int = 1) -> list:
    """Metrics table, one dict per grid point with keys :data:`COLUMNS`.

    Seeds ``seed .. seed+n-1`` are used for base-only and TER runs; the
    residual lookup built from a row's samples is evaluated on the fresh
    seeds ``seed+n .. seed+2n-1`` without intervention.  Detector precision
    and recall come from base-only runs on the fresh seeds (biased) plus the
    same seeds with zero bias, labelled by outcome.  Results are merged in
    seed order, so the table does not depend on ``workers``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    setup = setup or BenchmarkSetup()
    grid = make_grid() if grid is None else list(grid)
    seeds = [setup.seed + i for i in range(n_episodes)]
    fresh = [setup.seed + n_episodes + i for i in range(n_episodes)]
    pool = _Pool(workers)
    try:
        base = pool.map(_episode, [(setup, s, "base", setup.edit, frozenset(), None, False) for s in seeds])
        probe = pool.map(_episode, [(setup, s, "base", setup.edit, frozenset(), None, c)
                                    for c in (False, True) for s in fresh])
        labelled = [LabeledEpisode(r["scores"], not r["success"]) for r in probe]
        precision, recall = evaluate(labelled, setup.detector)
        success_base = float(np.mean([r["success"] for r in base]))
        fresh_base = float(np.mean([r["success"] for r in probe[:n_episodes]]))

        rows = []
        for gp in grid:
            edit = replace(setup.edit, n_points=gp.n_points)
            ter = pool.map(_episode, [(setup, s, "ter", edit, gp.sample_regions, None, False) for s in seeds])
            samples = [x for r in ter for x in r["samples"]]
            if samples:
                lookup = ResidualLookup(samples)
                resid = pool.map(_episode, [(setup, s, "base", edit, frozenset(), lookup, False) for s in fresh])
                success_residual = float(np.mean([r["success"] for r in resid]))
            else:
                success_residual = fresh_base
            ratios = [r["junction_ratio"] for r in ter if r["junction_ratio"] is not None]
            rows.append({
                "config": gp.label,
                "n_points": gp.n_points,
                "regions": gp.region_string,
                "episodes": n_episodes,
                "success_base": success_base,
                "success_ter": float(np.mean([r["success"] for r in ter])),
                "success_residual": success_residual,
                "mean_interventions": float(np.mean([r["interventions"] for r in ter])),
                "precision": precision,
                "recall": recall,
                "junction_ratio_mean": float(np.mean(ratios)) if ratios else float("nan"),
                "junction_ratio_max": float(np.max(ratios)) if ratios else float("nan"),
                "n_samples": len(samples),
            })
    finally:
        pool.close()
    return rows
