"""Plain-text record formats.

Every file starts with ``#`` header lines of ``key=value`` tokens followed
by comma-separated rows.  Floats are written with 17 significant digits, so
parsing a serialized record gives back the same binary values.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import warnings
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .detector import LabeledEpisode
from .geometry import Pose, Trajectory, Wrench
from .residuals import Region, Residual, ResidualSample
from .sim.episode import EpisodeLog, Mode, Outcome, StepRecord

POSE_FIELDS = ("px", "py", "pz", "qw", "qx", "qy", "qz")
WRENCH_FIELDS = ("fx", "fy", "fz", "tx", "ty", "tz")
TRAJECTORY_FIELDS = ("t",) + POSE_FIELDS
SAMPLE_FIELDS = (("region", "t") + tuple("s" + f for f in POSE_FIELDS) + tuple("a" + f for f in POSE_FIELDS)
                 + ("dpx", "dpy", "dpz", "dqw", "dqx", "dqy", "dqz"))
EPISODE_FIELDS = (("t", "mode") + tuple("cmd_" + f for f in POSE_FIELDS) + POSE_FIELDS
                  + tuple("pred_" + f for f in WRENCH_FIELDS) + WRENCH_FIELDS
                  + ("score", "position_score", "stiffness"))
METRIC_TYPES = {
    "config": str, "regions": str, "n_points": int, "episodes": int, "n_samples": int,
}

# quaternion norm tolerances: silent / renormalize with warning / reject
QUAT_EXACT_TOL = 1e-9
QUAT_REJECT_TOL = 1e-6


class FormatError(ValueError):
    """Malformed input; names the source, line and field."""

    def __init__(self, source, line: int, field: str | None, message: str):
        self.source, self.line, self.field = str(source), line, field
        where = f"{source}:{line}" + (f" field {field!r}" if field else "")
        super().__init__(f"{where}: {message}")


class QuaternionRenormalizedWarning(UserWarning):
    pass


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _join(values: Iterable) -> str:
    return ",".join(v if isinstance(v, str) else fmt(v) for v in values)


# ---------------------------------------------------------------------------
# low-level line handling
# ---------------------------------------------------------------------------

def _parse_header(tokens: str, source, line: int) -> dict:
    out = {}
    for tok in tokens.split():
        key, sep, value = tok.partition("=")
        if not sep:
            raise FormatError(source, line, None, f"header token {tok!r} is not key=value")
        out[key] = value
    return out


def _split(text: str, source):
    """Header dict and numbered data rows."""
    header, rows = {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s:
            continue
        if s.startswith("#"):
            if rows:
                raise FormatError(source, lineno, None, "header line after data")
            header.update(_parse_header(s[1:], source, lineno))
            continue
        rows.append((lineno, [c.strip() for c in s.split(",")]))
    return header, rows


def _fields(header: dict, source, allowed: Sequence[tuple]) -> tuple:
    if "fields" not in header:
        raise FormatError(source, 1, "fields", "header has no fields= entry")
    fields = tuple(header["fields"].split(","))
    if fields not in allowed:
        raise FormatError(source, 1, "fields", f"unexpected field list {','.join(fields)}")
    return fields


def _float(cell: str, source, line: int, field: str) -> float:
    try:
        x = float(cell)
    except ValueError:
        raise FormatError(source, line, field, f"not a number: {cell!r}") from None
    if not math.isfinite(x):
        raise FormatError(source, line, field, f"not finite: {cell!r}")
    return x


def _row_floats(cells, fields, source, line, skip=()) -> list:
    if len(cells) != len(fields):
        raise FormatError(source, line, None, f"expected {len(fields)} fields, got {len(cells)}")
    return [None if f in skip else _float(c, source, line, f) for c, f in zip(cells, fields)]


def checked_quaternion(q, source="<quaternion>", line: int = 0, field: str = "qw") -> np.ndarray:
    """Accept unit quaternions, renormalize small drift with a warning, reject the rest."""
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    dev = abs(n - 1.0)
    if dev > QUAT_REJECT_TOL:
        raise FormatError(source, line, field, f"quaternion norm {n!r} deviates from 1 by more than 1e-6")
    if dev > QUAT_EXACT_TOL:
        warnings.warn(f"{source}:{line}: quaternion norm {n!r} renormalized",
                      QuaternionRenormalizedWarning, stacklevel=3)
        return q / n
    return q


def _pose(vals, source, line, prefix="") -> Pose:
    return Pose(vals[:3], checked_quaternion(vals[3:7], source, line, prefix + "qw"))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def format_trajectory(traj: Trajectory) -> str:
    fields = TRAJECTORY_FIELDS + (WRENCH_FIELDS if traj.wrenches is not None else ())
    lines = [f"# dt={fmt(traj.dt)} fields={','.join(fields)}"]
    for i, x in enumerate(traj.poses):
        vals = [i * traj.dt, *x.p, *x.q]
        if traj.wrenches is not None:
            vals += list(traj.wrenches[i].as_array())
        lines.append(_join(vals))
    return "\n".join(lines) + "\n"


def parse_trajectory(text: str, source="<string>") -> Trajectory:
    header, rows = _split(text, source)
    if "dt" not in header:
        raise FormatError(source, 1, "dt", "header has no dt= entry")
    dt = _float(header["dt"], source, 1, "dt")
    if dt <= 0.0:
        raise FormatError(source, 1, "dt", "dt must be positive")
    fields = _fields(header, source, (TRAJECTORY_FIELDS, TRAJECTORY_FIELDS + WRENCH_FIELDS))
    if not rows:
        raise FormatError(source, 1, None, "no steps")
    poses, wrenches = [], []
    for i, (line, cells) in enumerate(rows):
        vals = _row_floats(cells, fields, source, line)
        if abs(vals[0] - i * dt) > 1e-9 * max(1.0, abs(vals[0])):
            raise FormatError(source, line, "t", f"time {vals[0]!r} is not step {i} * dt")
        poses.append(_pose(vals[1:8], source, line))
        if len(fields) > 8:
            wrenches.append(Wrench.from_array(vals[8:14]))
    return Trajectory(poses, dt, wrenches or None)


def write_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(format_trajectory(traj))


def parse_trajectory_file(path) -> Trajectory:
    return parse_trajectory(Path(path).read_text(), source=path)


# ---------------------------------------------------------------------------
# residual samples
# ---------------------------------------------------------------------------

def format_samples(samples: Iterable[ResidualSample]) -> str:
    lines = [f"# fields={','.join(SAMPLE_FIELDS)}"]
    for s in samples:
        lines.append(_join([s.region.value, str(s.step_index), *s.state.as_array(),
                            *s.base_action.as_array(), *s.residual.as_array()]))
    return "\n".join(lines) + "\n"


def parse_samples(text: str, source="<string>") -> list:
    header, rows = _split(text, source)
    fields = _fields(header, source, (SAMPLE_FIELDS,))
    out = []
    for line, cells in rows:
        vals = _row_floats(cells, fields, source, line, skip=("region", "t"))
        try:
            region = Region(cells[0])
        except ValueError:
            raise FormatError(source, line, "region", f"unknown region {cells[0]!r}") from None
        try:
            step = int(cells[1])
        except ValueError:
            raise FormatError(source, line, "t", f"not an integer step: {cells[1]!r}") from None
        state = _pose(vals[2:9], source, line, "s")
        action = _pose(vals[9:16], source, line, "a")
        dq = checked_quaternion(vals[19:23], source, line, "dqw")
        out.append(ResidualSample(state, action, Residual(vals[16:19], dq), region, step))
    return out


def write_samples(samples, path) -> None:
    Path(path).write_text(format_samples(samples))


def read_samples(path) -> list:
    return parse_samples(Path(path).read_text(), source=path)


# ---------------------------------------------------------------------------
# detector score streams
# ---------------------------------------------------------------------------

def format_scores(episode: LabeledEpisode) -> str:
    return f"# failed={int(episode.failed)}\n" + "".join(fmt(s) + "\n" for s in episode.scores)


def parse_scores(text: str, source="<string>") -> LabeledEpisode:
    header, rows = _split(text, source)
    if header.get("failed") not in ("0", "1"):
        raise FormatError(source, 1, "failed", "header needs failed=0 or failed=1")
    if not rows:
        raise FormatError(source, 1, None, "no scores")
    scores = []
    for line, cells in rows:
        if len(cells) != 1:
            raise FormatError(source, line, "score", "expected one score per line")
        scores.append(_float(cells[0], source, line, "score"))
    return LabeledEpisode(tuple(scores), header["failed"] == "1")


def write_scores(episode: LabeledEpisode, path) -> None:
    Path(path).write_text(format_scores(episode))


def read_scores(path) -> LabeledEpisode:
    return parse_scores(Path(path).read_text(), source=path)


# ---------------------------------------------------------------------------
# episode logs: per-step table plus a JSON sidecar of events and metadata
# ---------------------------------------------------------------------------

def format_episode_table(log: EpisodeLog) -> str:
    lines = [f"# seed={log.seed} outcome={log.outcome.value} fields={','.join(EPISODE_FIELDS)}"]
    for r in log.records:
        lines.append(_join([fmt(r.t), r.mode.value, *r.commanded.as_array(), *r.measured.as_array(),
                            *r.predicted_wrench.as_array(), *r.measured_wrench.as_array(),
                            r.score, r.position_score, r.stiffness]))
    return "\n".join(lines) + "\n"


def episode_events(log: EpisodeLog) -> dict:
    events, prev = [], None
    for i, r in enumerate(log.records):
        if r.mode is not prev:
            events.append({"step": i, "t": r.t, "event": f"mode:{r.mode.value}"})
            prev = r.mode
    if log.trigger_step is not None:
        events.append({"step": log.trigger_step, "t": log.records[log.trigger_step].t
                       if log.trigger_step < len(log.records) else None, "event": "trigger"})
    events.append({"step": len(log.records), "event": f"outcome:{log.outcome.value}"})
    return {
        "seed": log.seed,
        "outcome": log.outcome.value,
        "trigger_step": log.trigger_step,
        "k_star": log.k_star,
        "n_points": log.n_points,
        "interventions": log.interventions,
        "events": events,
        "metrics": log.metrics,
        "config": log.header,
    }


def parse_episode(table: str, sidecar: str, source="<episode>") -> EpisodeLog:
    header, rows = _split(table, source)
    fields = _fields(header, source, (EPISODE_FIELDS,))
    meta = json.loads(sidecar)
    records = []
    for line, cells in rows:
        vals = _row_floats(cells, fields, source, line, skip=("mode",))
        try:
            mode = Mode(cells[1])
        except ValueError:
            raise FormatError(source, line, "mode", f"unknown mode {cells[1]!r}") from None
        records.append(StepRecord(vals[0], mode, _pose(vals[2:9], source, line, "cmd_"),
                                  _pose(vals[9:16], source, line),
                                  Wrench.from_array(vals[16:22]), Wrench.from_array(vals[22:28]),
                                  vals[28], vals[29], vals[30]))
    return EpisodeLog(seed=int(meta["seed"]), records=records, outcome=Outcome(meta["outcome"]),
                      trigger_step=meta["trigger_step"], k_star=meta["k_star"],
                      n_points=meta["n_points"], header=meta["config"], metrics=meta["metrics"])


def write_episode(log: EpisodeLog, directory, stem: str = "episode") -> tuple[Path, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    table, side = d / f"{stem}.csv", d / f"{stem}.events.json"
    table.write_text(format_episode_table(log))
    side.write_text(json.dumps(episode_events(log), indent=2) + "\n")
    for name in ("base_plan", "demo", "corrected"):
        traj = getattr(log, name)
        if traj is not None:
            write_trajectory(traj, d / f"{stem}.{name}.csv")
    return table, side


def read_episode(directory, stem: str = "episode") -> EpisodeLog:
    d = Path(directory)
    table = d / f"{stem}.csv"
    log = parse_episode(table.read_text(), (d / f"{stem}.events.json").read_text(), source=table)
    for name in ("base_plan", "demo", "corrected"):
        p = d / f"{stem}.{name}.csv"
        if p.exists():
            setattr(log, name, parse_trajectory_file(p))
    return log


# ---------------------------------------------------------------------------
# metrics tables
# ---------------------------------------------------------------------------

def format_metrics(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


def parse_metrics(text: str, source="<string>") -> list:
    reader = csv.reader(_io.StringIO(text))
    try:
        columns = next(reader)
    except StopIteration:
        raise FormatError(source, 1, None, "empty metrics table") from None
    out = []
    for line, cells in enumerate(reader, start=2):
        if len(cells) != len(columns):
            raise FormatError(source, line, None, f"expected {len(columns)} fields, got {len(cells)}")
        row = {}
        for c, v in zip(columns, cells):
            kind = METRIC_TYPES.get(c, float)
            try:
                row[c] = kind(v)
            except ValueError:
                raise FormatError(source, line, c, f"bad value {v!r}") from None
        out.append(row)
    return out


def write_metrics(rows, path, columns=None) -> None:
    Path(path).write_text(format_metrics(rows, columns))


def read_metrics(path) -> list:
    return parse_metrics(Path(path).read_text(), source=path)
