"""Command-line entry points: design, validate, simulate, sweep.

Exit status is 0 on success, 1 for configuration errors and 2 for numerical
failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time

import numpy as np

from .config import ConfigError, RunConfig, RunReport
from .design import (
    Schedule,
    derive_seed,
    optimize_electrodes,
    plan_schedule,
    search_activation_sequences,
)
from .ising import enumerate_states
from .simulate import block_rng, estimate_success, simulate_sde, simulate_ssa, uniform_initial_states

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

logger = logging.getLogger(__name__)


class ScheduleMismatchError(ConfigError):
    pass


def _report(cmd: str, cfg: RunConfig, **kw) -> RunReport:
    return RunReport(command=cmd, config=cfg.to_dict(), config_hash=cfg.digest(),
                     seeds={"seed": cfg.seed}, **kw)


def _design_schedule(cfg: RunConfig, timings: dict):
    opts = cfg.design_options()
    g, p, noise = cfg.geometry, cfg.pattern_obj, cfg.noise
    extra = {}
    if cfg.n_min is not None:
        t0 = time.perf_counter()
        gaps, _, table = optimize_electrodes(p, g, cfg.n_min, noise, opts)
        timings["electrodes"] = time.perf_counter() - t0
        extra["electrode_table"] = [{"gaps": list(gp), "p_ss": pv} for gp, pv in table]
        g = type(g).from_gaps(gaps, g.d0, g.n_particles)
    t0 = time.perf_counter()
    if cfg.sequence is not None:
        sched = plan_schedule(p, g, noise, cfg.sequence, opts)
    else:
        sched, table = search_activation_sequences(p, g, noise, opts)
        extra["sequence_table"] = [{"sequence": [list(b) for b in seq], "p_total": pt} for seq, pt in table]
    timings["design"] = time.perf_counter() - t0
    return sched, extra


def run_design(cfg: RunConfig) -> RunReport:
    """Design a schedule for the configured pattern.

    Uses the configured activation sequence when given, otherwise searches all
    of them; with ``n_min`` set the electrode gaps are optimized first.
    """
    timings: dict = {}
    sched, extra = _design_schedule(cfg, timings)
    achieved = 1.0 - sched.p_total
    rep = _report(
        "design", cfg, timings=timings, schedule=sched.to_dict(), p_total=sched.p_total,
        stage_probabilities=[s.p_stage.to_dict() for s in sched.pieces],
        epsilon={"requested": cfg.epsilon, "achieved": achieved, "met": achieved <= cfg.epsilon},
        **extra,
    )
    rep.seeds["design"] = cfg.design_options().seed
    return rep


def load_schedule(path) -> Schedule:
    with open(path) as fh:
        d = json.load(fh)
    if "schedule" in d:
        d = d["schedule"]
    try:
        return Schedule.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ScheduleMismatchError(f"not a schedule document ({exc})", "schedule") from None


def _check_schedule(cfg: RunConfig, sched: Schedule):
    g = sched.geometry
    if g.n_cells != cfg.n_cells or g.n_particles != cfg.n or abs(g.d0 - cfg.d0) > 1e-12:
        raise ScheduleMismatchError("schedule geometry does not match the configuration", "schedule")
    if cfg.n_min is None and list(g.gaps) != list(cfg.gaps):
        raise ScheduleMismatchError("schedule electrode gaps differ from the configuration", "schedule")
    if str(sched.pattern) != cfg.pattern:
        raise ScheduleMismatchError("schedule pattern differs from the configuration", "schedule")


def run_validate(cfg: RunConfig, schedule_file, trials: int | None = None, model: str | None = None) -> RunReport:
    """Monte Carlo success rate of a stored schedule under the selected model(s)."""
    trials = cfg.trials if trials is None else trials
    if trials < 100:
        raise ConfigError("need at least 100 trials", "trials")
    model = model or cfg.model
    sched = load_schedule(schedule_file)
    _check_schedule(cfg, sched)
    models = ["continuous", "discrete"] if model == "both" else [model]
    timings, results, seeds = {}, {}, {"seed": cfg.seed}
    for m in models:
        seed = derive_seed(cfg.seed, "validate", m)
        seeds[f"validate_{m}"] = seed
        t0 = time.perf_counter()
        est = estimate_success(sched, sched.pattern, m, trials, seed, noise=cfg.noise, dt=cfg.dt)
        timings[m] = time.perf_counter() - t0
        results[m] = est.to_dict()
    rep = _report("validate", cfg, timings=timings, schedule=sched.to_dict(), p_total=sched.p_total,
                  validation=results)
    rep.seeds = seeds
    if len(results) == 2:
        rep.validation_gap = abs(results["continuous"]["value"] - results["discrete"]["value"])
    return rep


def run_simulate(cfg: RunConfig, schedule_file, seed: int, traj_path) -> RunReport:
    """Simulate one trajectory from a uniformly random start and write it as CSV."""
    sched = load_schedule(schedule_file)
    _check_schedule(cfg, sched)
    sub = derive_seed(seed, "simulate")
    rng = block_rng(sub, 0)
    t0 = time.perf_counter()
    if cfg.model == "discrete":
        ss = enumerate_states(cfg.n, cfg.n_cells, sched.geometry)
        z0 = int(rng.integers(0, ss.size))
        traj = simulate_ssa(z0, sched, ss, cfg.noise, seed=sub)
    else:
        x0 = uniform_initial_states(sched.geometry, 1, rng)[0]
        traj = simulate_sde(x0, sched, cfg.noise, dt=cfg.dt, seed=sub)
    traj.to_csv(traj_path)
    rep = _report("simulate", cfg, timings={"simulate": time.perf_counter() - t0},
                  schedule=sched.to_dict(), p_total=sched.p_total)
    rep.seeds = {"seed": seed, "simulate": sub}
    return rep


def run_sweep(cfg: RunConfig, sweep: dict, csv_path=None) -> list[RunReport]:
    """One design per point of the ``sigma`` x ``n_min`` grid.

    Missing axes keep the configured value; an empty axis gives no runs.
    """
    sigmas = sweep.get("sigma", [cfg.sigma])
    n_mins = sweep.get("n_min", [cfg.n_min])
    reports = []
    for s in sigmas:
        for nm in n_mins:
            d = cfg.to_dict()
            d["sigma"] = float(s)
            d["n_min"] = nm
            reports.append(run_design(RunConfig.from_dict(d)))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "n_min", "p_total"])
            for r in reports:
                w.writerow([r.config["sigma"], r.config["n_min"], r.p_total])
    return reports


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selfassembly", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    d = sub.add_parser("design", help="design a schedule")
    d.add_argument("--config", required=True)
    d.add_argument("--out", required=True)
    v = sub.add_parser("validate", help="Monte Carlo validation of a schedule")
    v.add_argument("--config", required=True)
    v.add_argument("--schedule", required=True)
    v.add_argument("--trials", type=int)
    v.add_argument("--model", choices=["continuous", "discrete", "both"])
    v.add_argument("--out")
    s = sub.add_parser("simulate", help="write one trajectory as CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--schedule", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--traj", required=True)
    s.add_argument("--out")
    w = sub.add_parser("sweep", help="design over a grid of sigma and n_min")
    w.add_argument("--config", required=True)
    w.add_argument("--sweep", required=True)
    w.add_argument("--out")
    w.add_argument("--csv")
    return ap


def _emit(rep: RunReport, path):
    rep.validate()
    if path:
        rep.save(path)
    else:
        json.dump(rep.to_dict(), sys.stdout, indent=2)
        sys.stdout.write("\n")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        if args.command == "design":
            _emit(run_design(cfg), args.out)
        elif args.command == "validate":
            _emit(run_validate(cfg, args.schedule, args.trials, args.model), args.out)
        elif args.command == "simulate":
            _emit(run_simulate(cfg, args.schedule, args.seed, args.traj), args.out)
        elif args.command == "sweep":
            with open(args.sweep) as fh:
                grid = json.load(fh)
            reports = run_sweep(cfg, grid, args.csv)
            for r in reports:
                r.validate()
            out = [r.to_dict() for r in reports]
            if args.out:
                with open(args.out, "w") as fh:
                    json.dump(out, fh, indent=2)
            else:
                json.dump(out, sys.stdout, indent=2)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
