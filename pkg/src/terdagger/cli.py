"""``terdagger`` command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on bad input data.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import io
from .alignment import nearest_point
from .config import ConfigError, RunConfig, load, with_overrides, write_resolved
from .detector import CalibrationError, DetectorConfig, calibrate, confusion, evaluate
from .editor import assemble_corrected, optimize_segment
from .residuals import ALL_REGIONS, Region, TrajectoryPolicy, generate_samples

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _regions(text: str) -> frozenset:
    try:
        return Region.parse_set(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"regions must be a subset of {','.join(r.value for r in Region)}") from None


def _config(args) -> RunConfig:
    return load(args.config) if args.config else RunConfig()


def _dump(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_edit(args) -> int:
    cfg = _config(args)
    edit = {}
    if args.n_points is not None:
        edit["n_points"] = args.n_points
    if args.lambda_s is not None:
        edit["lambda_s"] = args.lambda_s
    if args.lambda_e is not None:
        edit["lambda_e"] = args.lambda_e
    if args.lambda_q is not None:
        edit.update(lambda_qf=args.lambda_q, lambda_qs=args.lambda_q, lambda_qe=args.lambda_q)
    if args.soft_endpoint:
        edit["hard_endpoint"] = False
    if args.smoothness is not None:
        edit["smoothness"] = args.smoothness
    cfg = with_overrides(cfg, edit=edit)
    base = io.parse_trajectory_file(args.base)
    demo = io.parse_trajectory_file(args.demo)
    align = nearest_point(base, demo[0], cfg.alignment)
    result = optimize_segment(base, align.k_star, demo[0], cfg.edit)
    corrected = assemble_corrected(base, align.k_star, result.segment, demo, result.n_effective,
                                   tol=1e-6 if cfg.edit.hard_endpoint else math.inf)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_trajectory(corrected, out)
    meta = {
        "k_star": align.k_star,
        "n_points": result.n_effective,
        "endpoint_position_error": float(result.endpoint_error[0]),
        "endpoint_quaternion_error": float(result.endpoint_error[1]),
        "iterations": result.iterations,
        "objective": float(result.objective),
        "converged": result.converged,
    }
    out.with_suffix(".edit.json").write_text(json.dumps(meta, indent=2) + "\n")
    write_resolved(cfg, out.parent)
    _dump(meta)
    return EXIT_OK


def cmd_gen_residuals(args) -> int:
    cfg = _config(args)
    base = io.parse_trajectory_file(args.base)
    corrected = io.parse_trajectory_file(args.corrected)
    demo = io.parse_trajectory_file(args.demo)
    k_star, n = args.k_star, args.n_points
    if args.meta:
        meta = json.loads(Path(args.meta).read_text())
        k_star = meta["k_star"] if k_star is None else k_star
        n = meta["n_points"] if n is None else n
    if k_star is None or n is None:
        raise UsageError("gen-residuals: give --meta or both --k-star and --n-points")
    segment = corrected.slice(k_star - n, k_star + 1)
    samples = generate_samples(base, corrected, segment, demo, k_star, n, TrajectoryPolicy(base),
                               args.regions, match_weight_q=cfg.post_match_weight_q)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_samples(samples, out)
    write_resolved(cfg, out.parent)
    counts = {r.value: sum(s.region is r for s in samples) for r in Region}
    _dump({"samples": len(samples), **counts})
    return EXIT_OK


def cmd_calibrate(args) -> int:
    episodes = [io.read_scores(p) for p in args.scores]
    c = calibrate(episodes)
    cfg = DetectorConfig(threshold_c=c, debounce_k=1)
    precision, recall = evaluate(episodes, cfg)
    record = {"threshold_c": c, "precision": precision, "recall": recall, "episodes": len(episodes)}
    if args.out:
        Path(args.out).write_text(io.format_metrics([record], list(record)))
    _dump(record)
    return EXIT_OK


def cmd_detect_eval(args) -> int:
    episodes = [io.read_scores(p) for p in args.scores]
    cfg = DetectorConfig(threshold_c=args.threshold, debounce_k=args.debounce)
    precision, recall = evaluate(episodes, cfg)
    tp, fp, fn, tn = confusion(episodes, cfg)
    record = {"threshold_c": args.threshold, "debounce_k": args.debounce, "precision": precision,
              "recall": recall, "tp": tp, "fp": fp, "fn": fn, "tn": tn}
    if args.out:
        Path(args.out).write_text(io.format_metrics([record], list(record)))
    _dump(record)
    return EXIT_OK


def _bias(values: tuple) -> tuple:
    if len(values) == 1:
        return (0.0, values[0], 0.0)
    if len(values) == 3:
        return values
    raise UsageError("--bias takes one value (y offset) or three (x,y,z)")


def cmd_simulate(args) -> int:
    from .sim.episode import run_episode

    cfg = _config(args)
    seed = cfg.seed if args.seed is None else args.seed
    policy = {} if args.bias is None else {"belief_bias": _bias(args.bias)}
    cfg = with_overrides(cfg, scene={"rng_seed": seed}, policy=policy, run={"seed": seed})
    res = run_episode(cfg.scene, cfg.policy, cfg.detector, None, cfg.edit, controller=cfg.impedance,
                      mode=args.mode, alignment=cfg.alignment, match_weight_q=cfg.post_match_weight_q)
    out = Path(args.out or cfg.output_dir)
    io.write_episode(res.log, out)
    if res.samples:
        io.write_samples(res.samples, out / "samples.csv")
    write_resolved(cfg, out)
    _dump({"seed": seed, "outcome": res.log.outcome.value, "trigger_step": res.log.trigger_step,
           "k_star": res.log.k_star, "n_points": res.log.n_points,
           "interventions": res.log.interventions, "samples": len(res.samples)})
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .sim.benchmark import COLUMNS, REGION_ROWS, BenchmarkSetup, make_grid, run_benchmark

    cfg = _config(args)
    seed = cfg.seed if args.seed is None else args.seed
    workers = cfg.workers if args.workers is None else args.workers
    cfg = with_overrides(cfg, run={"seed": seed, "workers": workers})
    unknown = [r for r in args.region_grid if r not in REGION_ROWS]
    if unknown:
        raise UsageError(f"benchmark: unknown region rows {unknown}; choose from {list(REGION_ROWS)}")
    setup = BenchmarkSetup(cfg.scene, cfg.policy, cfg.detector, cfg.impedance, cfg.edit, seed)
    grid = make_grid(args.n_grid, args.region_grid, cfg.edit.n_points)
    rows = run_benchmark(args.episodes, grid, setup, workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_metrics(rows, out, COLUMNS)
    write_resolved(cfg, out.parent)
    sys.stdout.write(io.format_metrics(rows, COLUMNS))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="terdagger", description="Trajectory editing, residual labels and failure detection.",
                formatter_class=fmt)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        sp.add_argument("--config", metavar="INI", help="run configuration file")
        return sp

    e = add("edit", "Blend a base trajectory into a demonstration and write the corrected trajectory.")
    e.add_argument("base", help="base trajectory file")
    e.add_argument("demo", help="demonstration trajectory file")
    e.add_argument("--out", required=True, help="corrected trajectory file; metadata goes to <out>.edit.json")
    e.add_argument("--n-points", type=int, default=None, help="edit window length (config default 20)")
    e.add_argument("--lambda-s", type=float, default=None, help="position smoothness weight (default 1)")
    e.add_argument("--lambda-e", type=float, default=None, help="soft endpoint weight (default 1000)")
    e.add_argument("--lambda-q", type=float, default=None,
                   help="sets all three orientation weights (default 0.5 each)")
    e.add_argument("--soft-endpoint", action="store_true", help="penalize instead of fixing the endpoint")
    e.add_argument("--smoothness", choices=("relative", "absolute"), default=None,
                   help="smoothness form (config default relative)")
    e.set_defaults(func=cmd_edit)

    g = add("gen-residuals", "Emit residual samples from an edit.")
    g.add_argument("base", help="base trajectory file")
    g.add_argument("corrected", help="corrected trajectory file")
    g.add_argument("demo", help="demonstration trajectory file")
    g.add_argument("--meta", help="edit metadata JSON written by `edit`")
    g.add_argument("--k-star", type=int, default=None, help="alignment index (overrides --meta)")
    g.add_argument("--n-points", type=int, default=None, help="effective window length (overrides --meta)")
    g.add_argument("--regions", type=_regions, default=ALL_REGIONS,
                   help="comma-separated subset of pre,transition,demo,post (default all)")
    g.add_argument("--out", required=True, help="sample file")
    g.set_defaults(func=cmd_gen_residuals)

    c = add("calibrate", "Threshold with full recall and maximal precision from labelled score files.")
    c.add_argument("scores", nargs="+", help="score files, one episode each")
    c.add_argument("--out", help="optional comma-separated record file")
    c.set_defaults(func=cmd_calibrate)

    d = add("detect-eval", "Episode-level precision and recall at a threshold.")
    d.add_argument("scores", nargs="+", help="score files, one episode each")
    d.add_argument("--threshold", type=float, required=True, help="threshold c")
    d.add_argument("--debounce", type=int, default=1, help="consecutive exceedances required")
    d.add_argument("--out", help="optional comma-separated record file")
    d.set_defaults(func=cmd_detect_eval)

    s = add("simulate", "Run one insertion episode.")
    s.add_argument("--seed", type=int, default=None, help="episode seed (config default 0)")
    s.add_argument("--bias", type=_floats, default=None,
                   help="belief bias: y offset or x,y,z in m (config default 0,0.004,0)")
    s.add_argument("--mode", choices=("base", "ter"), default="ter", help="base only or with interventions")
    s.add_argument("--out", default=None, help="output directory (config default out)")
    s.set_defaults(func=cmd_simulate)

    b = add("benchmark", "Seeded ablation over edit window sizes and residual regions.")
    b.add_argument("--episodes", type=int, default=20, help="episodes per configuration")
    b.add_argument("--n-grid", type=_ints, default=(10, 20, 30, 40), help="edit window sizes")
    b.add_argument("--region-grid", type=lambda t: tuple(x.strip() for x in t.split(",") if x.strip()),
                   default=("base", "T", "D", "P", "T+D", "T+P", "D+P", "all"),
                   help="region rows; T/D/P = transition/demo/post, pre is always kept")
    b.add_argument("--out", default="benchmark.csv", help="metrics table")
    b.add_argument("--seed", type=int, default=None, help="first seed (config default 0)")
    b.add_argument("--workers", type=int, default=None, help="worker processes (config default 1)")
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        if getattr(args, "episodes", 1) < 1:
            raise UsageError("benchmark: --episodes must be >= 1")
        return args.func(args)
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (io.FormatError, ConfigError, CalibrationError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
