"""Command-line driver: ``vickrey-due load|solve|validate scenario.json --out DIR``.

Exit codes: 0 success, 2 scenario or model error, 3 loading error,
4 solver did not converge (outputs are still written), 5 a validation
check failed. Diagnostics go to stderr, data only to files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .diagnostics import (Check, conservation_error, continuity_probe, delay_bound_excess,
                          fifo_violation, monotone_within)
from .loading import LoadingError, delay_upper_bound, load_network, write_csvs
from .penalty import PenaltyError, arrival_window, effective_path_delay, make_penalty
from .scenario import ScenarioError, load_scenario
from .solver import FeasibleSetSpec, project_feasible, solve_fixed_point, verify_due

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_LOADING = 3
EXIT_NOT_CONVERGED = 4
EXIT_VALIDATION = 5
PROBE_DECAY = 0.05

log = logging.getLogger("vickrey_due")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _penalty_or_zero(sc):
    if sc.penalty is not None:
        return sc.penalty
    return make_penalty({"kind": "none", "target_arrival": sc.tf})


def cmd_load(sc, out: Path, args):
    if sc.path_flows is None:
        raise ScenarioError("load needs fixed departure rates in 'path_flows'")
    h = sc.path_flows
    result = load_network(sc.network, h, sc.horizon_end)
    out.mkdir(parents=True, exist_ok=True)
    write_csvs(result, out)
    penalty = _penalty_or_zero(sc)
    for p in sc.network.path_ids:
        effective_path_delay(result, p, penalty).to_pwl().to_csv(out / f"path_{p}_psi.csv")
    bounds = delay_upper_bound(sc.network)
    paths = {}
    for p in sc.network.path_ids:
        d = result.path_delay[p]
        paths[p] = {"min_delay": float(d.v.min()), "max_delay": float(d.v.max()),
                    "delay_bound": bounds[p], "within_bound": bool(d.v.max() <= bounds[p]),
                    "volume": h.volume(p)}
    summary = {
        "command": "load",
        "t0": sc.t0, "tf": sc.tf, "horizon_end": sc.horizon_end, "n_passes": result.n_passes,
        "paths": paths,
        "arcs": {a: {"max_queue": float(ld.state.q.v.max()), "terminal_queue": ld.state.terminal_queue()}
                 for a, ld in result.arcs.items()},
    }
    _write_json(out / "summary.json", summary)
    log.info("loaded %d arcs, %d paths into %s", len(result.arcs), len(paths), out)
    return EXIT_OK


def cmd_solve(sc, out: Path, args):
    if sc.penalty is None:
        raise ScenarioError("solve needs a 'penalty'")
    level = sc.grid_level if args.grid_level is None else args.grid_level
    tol = sc.solver["tol"] if args.tol is None else args.tol
    max_iter = sc.solver["max_iter"] if args.max_iter is None else args.max_iter
    spec = FeasibleSetSpec.from_network(sc.network, sc.t0, sc.tf, level)
    report = solve_fixed_point(sc.network, spec, sc.penalty, alpha0=sc.solver["alpha0"], tol=tol,
                               max_iter=max_iter, horizon_end=sc.horizon_end, method=sc.solver["method"])
    check = verify_due(report)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["verification"] = {"passed": check.passed, "failures": list(check.failures), "details": check.details}
    _write_json(out / "report.json", doc)
    with open(out / "gap_history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "abs_gap", "rel_gap"])
        for k, a, r in report.gap_history:
            w.writerow([k, repr(float(a)), repr(float(r))])
    grid = spec.grid
    with open(out / "flows.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "cell_start", "rate"])
        for p, rates in zip(report.flows.path_ids, report.flows.rates):
            for t, r in zip(grid[:-1], rates):
                w.writerow([p, repr(float(t)), repr(float(r))])
    log.info("%s after %d iterations: relative gap %.3e", "converged" if report.converged else "NOT converged",
             report.iterations, report.rel_gap)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def run_checks(sc, seed=0, level=None):
    """Run the invariant suite on the scenario's fixed flows (or the uniform spread)."""
    net = sc.network
    level = sc.grid_level if level is None else level
    checks = []
    penalty = _penalty_or_zero(sc)
    window = arrival_window(net, sc.t0, sc.horizon_end)
    try:
        slope = penalty.check_slope(window)
        checks.append(Check("arrival slope", True, slope, 1e-6, "1 + min F' on arrival window"))
    except PenaltyError as exc:
        lo, hi = (w - penalty.target_arrival for w in window)
        slope = 1.0 + min(float(np.min(penalty.derivative(np.linspace(lo, hi, 10_000)))),
                          penalty.min_derivative(lo, hi))
        checks.append(Check("arrival slope", False, slope, 1e-6, str(exc)))

    spec = FeasibleSetSpec.from_network(net, sc.t0, sc.tf, level)
    h = sc.path_flows if sc.path_flows is not None else spec.uniform()
    result = load_network(net, h, sc.horizon_end)
    checks.append(Check("FIFO", fifo_violation(result) <= 0.0, fifo_violation(result), 0.0,
                        "largest backward step of exit-time curves"))
    err = conservation_error(net, h, result)
    checks.append(Check("conservation", err <= 1e-9, err, 1e-9, "relative mass residual"))
    excess = delay_bound_excess(net, result)
    checks.append(Check("delay bound", excess <= 0.0, excess, 0.0, "max delay minus bound"))

    rng = np.random.default_rng(seed)
    if sc.path_flows is not None:
        spec = FeasibleSetSpec(sc.t0, sc.tf, h.level, spec.path_ids, spec.od_ids,
                               tuple(sum(h.volume(spec.path_ids[r]) for r in rows) for rows in spec.groups),
                               spec.groups)
    # a spiky target so that the probe direction creates queues
    other = project_feasible(rng.exponential(size=h.rates.shape) ** 4, spec)
    dist = continuity_probe(net, h, penalty, other.rates - h.rates, sc.horizon_end)
    ratio = dist[-1] / dist[0] if dist[0] > 0 else 0.0
    ok = monotone_within(dist) and ratio <= PROBE_DECAY
    checks.append(Check("continuity probe", ok, ratio, PROBE_DECAY,
                        f"last/first sup distance over halving perturbations, first={dist[0]:.3g}"))
    return checks


def cmd_validate(sc, out, args):
    checks = run_checks(sc, seed=args.seed, level=args.grid_level)
    for c in checks:
        print(c.line())
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "validate.json", [{"name": c.name, "passed": c.passed, "value": c.value,
                                             "limit": c.limit, "note": c.note} for c in checks])
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VALIDATION


COMMANDS = {"load": cmd_load, "solve": cmd_solve, "validate": cmd_validate}


def build_parser():
    ap = argparse.ArgumentParser(prog="vickrey-due", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("scenario", type=Path)
    ap.add_argument("--out", type=Path, default=None, help="output directory")
    ap.add_argument("--grid-level", type=int, default=None)
    ap.add_argument("--tol", type=float, default=None)
    ap.add_argument("--max-iter", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0, help="seed of the randomized validation probes")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s: %(message)s")
    if args.command != "validate" and args.out is None:
        print(f"error: {args.command} needs --out", file=sys.stderr)
        return EXIT_SCENARIO
    if args.grid_level is not None and args.grid_level < 0:
        print("error: --grid-level must be nonnegative", file=sys.stderr)
        return EXIT_SCENARIO
    try:
        sc = load_scenario(args.scenario)
        return COMMANDS[args.command](sc, args.out, args)
    except (ScenarioError, PenaltyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except LoadingError as exc:
        print(f"loading error: {exc}", file=sys.stderr)
        return EXIT_LOADING


if __name__ == "__main__":
    sys.exit(main())
