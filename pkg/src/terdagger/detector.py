"""Failure detection from force (or position) prediction error.

The online rule flags step ``t`` once the last ``debounce_k`` scores all
exceed the threshold.  For episode-level evaluation an episode counts as
flagged when :func:`detect` fires anywhere in it, which for ``debounce_k=1``
is the same as ``max(scores) > c``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import Pose, Wrench, position_distance


class Metric(str, enum.Enum):
    FORCE = "force"
    POSITION = "position"
    # KL / reconstruction-loss scores need a trained latent-variable policy;
    # they are accepted as score streams but not computed here
    KL_LOSS = "kl"
    RECONSTRUCTION = "reconstruction"


# per-task thresholds reported for the force and position baselines
FORCE_THRESHOLDS = {
    "usb": 11.0,
    "two_pin": 13.0,
    "usb_real": 16.0,
    "two_pin_real": 15.0,
    "three_pin_real": 14.0,
}
POSITION_THRESHOLDS = {
    "usb": 0.012,
    "two_pin": 0.012,
    "usb_real": 0.018,
    "two_pin_real": 0.024,
    "three_pin_real": 0.025,
}


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    metric: Metric = Metric.FORCE
    threshold_c: float = FORCE_THRESHOLDS["usb"]
    debounce_k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        if not self.threshold_c > 0.0:
            raise ValueError("threshold_c must be positive")
        if self.debounce_k < 1:
            raise ValueError("debounce_k must be >= 1")


@dataclass(frozen=True)
class LabeledEpisode:
    scores: tuple
    failed: bool

    def __post_init__(self):
        s = tuple(float(x) for x in self.scores)
        if not s:
            raise ValueError("episode has no scores")
        if not all(math.isfinite(x) for x in s):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "failed", bool(self.failed))

    @property
    def peak(self) -> float:
        return max(self.scores)


def force_error(predicted: Wrench, measured: Wrench) -> float:
    """L1 distance over all six wrench components."""
    return float(np.sum(np.abs(predicted.as_array() - measured.as_array())))


def position_error(predicted_action: Pose, current: Pose) -> float:
    return position_distance(predicted_action, current)


class StreamingDetector:
    """Online form of :func:`detect`; keeps only a run-length counter."""

    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self.run = 0
        self.step = -1
        self.triggered_at: int | None = None

    def update(self, score: float) -> bool:
        self.step += 1
        self.run = self.run + 1 if score > self.cfg.threshold_c else 0
        if self.run >= self.cfg.debounce_k and self.triggered_at is None:
            self.triggered_at = self.step
        return self.run >= self.cfg.debounce_k


def detect(scores: Iterable[float], cfg: DetectorConfig) -> int | None:
    """First index whose trailing ``debounce_k`` scores all exceed the threshold."""
    run = 0
    for t, s in enumerate(scores):
        run = run + 1 if s > cfg.threshold_c else 0
        if run >= cfg.debounce_k:
            return t
    return None


def calibrate(episodes: Sequence[LabeledEpisode]) -> float:
    """Largest-margin threshold that still flags every failed episode.

    Let ``m`` be the smallest peak score among failed episodes.  Any ``c < m``
    gives recall 1 and precision only grows with ``c``, so ``c`` is placed
    midway between ``m`` and the highest successful peak below it (or a
    relative 1e-9 below ``m`` when there is none).
    """
    failed = [e.peak for e in episodes if e.failed]
    ok = [e.peak for e in episodes if not e.failed]
    if not failed:
        raise CalibrationError("no failed episodes to calibrate against")
    m = min(failed)
    if m <= 0.0:
        raise CalibrationError(
            "a failed episode never scores above zero; no positive threshold can flag it")
    below = [s for s in ok if s < m]
    if below:
        return 0.5 * (m + max(below))
    return m - 1e-9 * abs(m)


def confusion(episodes: Sequence[LabeledEpisode], cfg: DetectorConfig) -> tuple[int, int, int, int]:
    tp = fp = fn = tn = 0
    for e in episodes:
        flagged = detect(e.scores, cfg) is not None
        if flagged and e.failed:
            tp += 1
        elif flagged:
            fp += 1
        elif e.failed:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def evaluate(episodes: Sequence[LabeledEpisode], cfg: DetectorConfig) -> tuple[float, float]:
    """Episode-level ``(precision, recall)``.

    With no positive predictions precision is 1.0 when there are no failures
    and 0.0 otherwise; with no failures recall is 1.0.
    """
    tp, fp, fn, _ = confusion(episodes, cfg)
    n_failed = tp + fn
    if tp + fp == 0:
        precision = 1.0 if n_failed == 0 else 0.0
    else:
        precision = tp / (tp + fp)
    recall = 1.0 if n_failed == 0 else tp / n_failed
    return precision, recall
