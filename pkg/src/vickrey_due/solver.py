"""Fixed-point solvers for route-and-departure-time equilibrium.

Departure rates live on a dyadic grid of ``2**n`` cells. A flow vector is a
discrete equilibrium when every cell carrying flow has the minimal
cell-averaged effective delay of its origin-destination pair.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .loading import PathFlowVector, default_horizon_end, delay_upper_bound, load_network
from .network import Network
from .penalty import Penalty, arrival_window, effective_path_delay, flow_bound_constant

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeasibleSetSpec:
    """Dyadic feasible set: nonnegative step rates with fixed volume per OD pair.

    ``groups[i]`` holds the row indices (into ``path_ids``) of OD pair
    ``od_ids[i]`` and ``demands[i]`` its volume.
    """

    t0: float
    tf: float
    level: int
    path_ids: tuple
    od_ids: tuple
    demands: tuple
    groups: tuple

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("grid level must be nonnegative")
        if not self.tf > self.t0:
            raise ValueError("need tf > t0")
        if any(not q > 0 for q in self.demands):
            raise ValueError("demands must be positive")

    @classmethod
    def from_network(cls, net: Network, t0, tf, level):
        path_ids = net.path_ids
        groups = tuple(tuple(path_ids.index(p) for p in od.paths) for od in net.od_pairs)
        return cls(float(t0), float(tf), int(level), path_ids,
                   tuple(od.id for od in net.od_pairs), tuple(od.demand for od in net.od_pairs), groups)

    @property
    def n_cells(self):
        return 2 ** self.level

    @property
    def width(self):
        return (self.tf - self.t0) / self.n_cells

    @property
    def grid(self):
        return np.linspace(self.t0, self.tf, self.n_cells + 1)

    def at_level(self, level):
        return FeasibleSetSpec(self.t0, self.tf, level, self.path_ids, self.od_ids, self.demands, self.groups)

    def uniform(self) -> PathFlowVector:
        """Each OD volume spread evenly over all its path-cells."""
        rates = np.zeros((len(self.path_ids), self.n_cells))
        for rows, q in zip(self.groups, self.demands):
            rates[list(rows)] = q / (len(rows) * (self.tf - self.t0))
        return PathFlowVector(self.path_ids, self.t0, self.tf, rates)

    def mass_errors(self, h: PathFlowVector):
        return [abs(h.rates[list(rows)].sum() * self.width - q) for rows, q in zip(self.groups, self.demands)]


def _project_capped_sum(x, total):
    """Euclidean projection of ``x`` onto ``{y >= 0, sum(y) = total}`` by sort and threshold."""
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - total
    j = np.arange(1, u.size + 1)
    rho = np.nonzero(u - css / j > 0)[0][-1]
    lam = css[rho] / (rho + 1)
    return np.maximum(x - lam, 0.0)


def project_feasible(g, spec: FeasibleSetSpec) -> PathFlowVector:
    """Closest feasible flow to ``g`` in the cell-width weighted L2 norm.

    Each OD pair is independent: ``h = max(g - lam, 0)`` with ``lam`` chosen
    so that the volume equals the demand.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (len(spec.path_ids), spec.n_cells):
        raise ValueError(f"expected shape {(len(spec.path_ids), spec.n_cells)}, got {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("projection input must be finite")
    h = np.zeros_like(g)
    for rows, q in zip(spec.groups, spec.demands):
        rows = list(rows)
        h[rows] = _project_capped_sum(g[rows].ravel(), q / spec.width).reshape(len(rows), -1)
    return PathFlowVector(spec.path_ids, spec.t0, spec.tf, h)


def cell_average_psi(net: Network, h: PathFlowVector, penalty: Penalty, horizon_end=None, result=None):
    """Cell averages of every path's effective delay, shape ``(paths, cells)``."""
    if result is None:
        result = load_network(net, h, horizon_end)
    grid = h.grid
    return np.vstack([effective_path_delay(result, p, penalty).cell_averages(grid) for p in h.path_ids])


def equilibrium_gap(h: PathFlowVector, psi_bar, spec: FeasibleSetSpec):
    """Return ``(absolute gap, relative gap, per-OD minimal cost)``.

    ``gap = sum over OD, paths, cells of (psi_bar - v_od) * h * width`` where
    ``v_od`` is the smallest cell-averaged cost of the OD pair.
    """
    psi_bar = np.asarray(psi_bar, dtype=float)
    abs_gap = 0.0
    denom = 0.0
    costs = []
    for rows, q in zip(spec.groups, spec.demands):
        rows = list(rows)
        v = float(psi_bar[rows].min())
        costs.append(v)
        abs_gap += float(np.sum((psi_bar[rows] - v) * h.rates[rows])) * spec.width
        denom += q * v
    abs_gap = max(abs_gap, 0.0)
    return abs_gap, abs_gap / denom, costs


def refine(h: PathFlowVector) -> PathFlowVector:
    """Split every cell in two, keeping its rate."""
    return PathFlowVector(h.path_ids, h.t0, h.tf, np.repeat(h.rates, 2, axis=1))


@dataclass
class SolverReport:
    flows: PathFlowVector
    od_ids: tuple
    od_costs: tuple
    gap_history: list
    converged: bool
    psi_bar: np.ndarray
    spec: FeasibleSetSpec
    rate_bound: float
    delay_bounds: dict
    max_delays: dict
    used_cell_deviation: float
    alpha0: float
    method: str = "newton"
    warnings: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.gap_history)

    @property
    def abs_gap(self):
        return self.gap_history[-1][1]

    @property
    def rel_gap(self):
        return self.gap_history[-1][2]

    @property
    def max_rate(self):
        return float(self.flows.rates.max())

    def to_dict(self):
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "grid_level": self.spec.level,
            "t0": self.spec.t0,
            "tf": self.spec.tf,
            "method": self.method,
            "alpha0": self.alpha0,
            "abs_gap": self.abs_gap,
            "rel_gap": self.rel_gap,
            "od_costs": dict(zip(self.od_ids, self.od_costs)),
            "max_cell_rate": self.max_rate,
            "rate_bound": self.rate_bound,
            "used_cell_deviation": self.used_cell_deviation,
            "delay_bounds": self.delay_bounds,
            "max_path_delays": self.max_delays,
            "flows": {p: list(map(float, r)) for p, r in zip(self.flows.path_ids, self.flows.rates)},
            "warnings": list(self.warnings),
        }


def default_alpha0(spec: FeasibleSetSpec, psi_bar):
    """Step size that moves one mean cell rate per unit of cost spread."""
    mean_rate = sum(spec.demands) / (len(spec.path_ids) * (spec.tf - spec.t0))
    spread = float(np.ptp(psi_bar))
    return 0.5 * mean_rate / max(spread, 1e-12) * spec.n_cells ** 0.5


def _used_cell_deviation(h, psi_bar, spec, costs, eps=1e-2):
    dev = 0.0
    for rows, q, v in zip(spec.groups, spec.demands, costs):
        rows = list(rows)
        used = h.rates[rows] > eps * q / (spec.tf - spec.t0)
        if used.any():
            dev = max(dev, float(np.max(np.abs(psi_bar[rows][used] - v))))
    return dev


MU_GRID = 10.0 ** np.arange(-6, 7)
STEP_FRACTIONS = (1.0, 0.5, 0.25)


class _PivotFailure(RuntimeError):
    pass


def _linearized_solution(h, psi, J, spec: FeasibleSetSpec, od_of_row):
    """Solve the VI linearized at ``h`` over the feasible set.

    Finds ``x >= 0`` and per-OD ``v`` with ``w = psi + J (x - h) - v >= 0``,
    ``x . w = 0`` and the volume constraints, by least-index principal pivoting
    on the support set.
    """
    m = h.size
    K = len(spec.groups)
    c = psi - J @ h
    Q = np.asarray(spec.demands)
    S = set(np.nonzero(h > 0)[0].tolist())
    for j in range(K):
        rows = od_of_row == j
        S.add(int(np.argmin(np.where(rows, psi, np.inf))))
    for _ in range(20 * m + 20):
        idx = np.array(sorted(S))
        n = idx.size
        A = np.zeros((n + K, n + K))
        A[:n, :n] = J[np.ix_(idx, idx)]
        A[np.arange(n), n + od_of_row[idx]] = -1.0
        A[n + od_of_row[idx], np.arange(n)] = spec.width
        b = np.concatenate((-c[idx], Q))
        try:
            sol = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            raise _PivotFailure("singular support system") from None
        x = np.zeros(m)
        x[idx] = sol[:n]
        v = sol[n:]
        w = c + J @ x - v[od_of_row]
        scale = 1e-12 * max(1.0, float(np.max(np.abs(sol))))
        bad = [i for i in idx if x[i] < -scale]
        bad += [i for i in range(m) if i not in S and w[i] < -scale]
        if not bad:
            return np.maximum(x, 0.0)
        i = min(bad)
        if i in S:
            S.discard(i)
            if not any(od_of_row[j] == od_of_row[i] for j in S):
                raise _PivotFailure("OD pair lost its whole support")
        else:
            S.add(i)
    raise _PivotFailure("principal pivoting did not terminate")


def _cost_jacobian(costs, h: PathFlowVector, psi, rel_step=1e-7):
    """Forward-difference Jacobian of the cell costs."""
    x = h.rates.ravel()
    m = x.size
    J = np.empty((m, m))
    base = psi.ravel()
    shape = h.rates.shape
    for i in range(m):
        e = rel_step * max(1.0, x[i])
        xx = x.copy()
        xx[i] += e
        hp = PathFlowVector(h.path_ids, h.t0, h.tf, xx.reshape(shape))
        J[:, i] = (costs(hp)[1].ravel() - base) / e
    return J


def _newton_step(costs, h, psi_bar, rel_gap, spec, od_of_row, alpha0):
    """One regularized Newton iteration; returns ``(h, result, psi_bar, gap)`` or ``None``.

    Candidates come from the linearized problem at every proximal weight in
    ``MU_GRID / alpha0`` and a few fractions of each step; the one with the
    smallest gap wins. If nothing improves, the full Newton step at the
    smallest weight is taken to leave a local minimum of the gap.
    """
    J = _cost_jacobian(costs, h, psi_bar)
    x = h.rates.ravel()
    eye = np.eye(x.size)
    cands = []
    # the linear model is only trusted locally: scan the proximal weight
    for mu in MU_GRID / alpha0:
        try:
            xn = _linearized_solution(x, psi_bar.ravel(), J + mu * eye, spec, od_of_row)
        except _PivotFailure:
            continue
        for frac in STEP_FRACTIONS:
            hn = PathFlowVector(h.path_ids, h.t0, h.tf, (x + frac * (xn - x)).reshape(h.rates.shape))
            rn, pn = costs(hn)
            cands.append((hn, rn, pn, equilibrium_gap(hn, pn, spec)))
    if not cands:
        return None
    pick = min(cands, key=lambda c: c[3][1])
    if pick[3][1] >= rel_gap:
        # stuck at a local minimum of the gap
        pick = cands[0]
    return pick


def solve_fixed_point(net: Network, spec: FeasibleSetSpec, penalty: Penalty, alpha0=None, tol=1e-3,
                      max_iter=2000, horizon_end=None, h0=None, method="newton", step_decay=20.0,
                      callback=None, cost_transform=None, quiet=False):
    """Solve the discrete equilibrium problem on the grid of ``spec``.

    ``method="projection"`` iterates ``h <- P(h - alpha_k * psi_bar(h))`` with
    ``alpha_k = alpha0 / (1 + k / step_decay)``. ``method="newton"`` replaces
    the fixed metric by the finite-difference Jacobian of the cell costs plus
    a proximal term ``mu I`` (see :func:`_newton_step`). With a zero Jacobian
    the Newton step is a projection step with ``alpha = 1/mu``.

    Starts from ``h0`` or the uniform spread and stops once the relative gap
    is at most ``tol`` or after ``max_iter`` iterations; non-convergence is
    flagged in the report, never raised. ``cost_transform``, if given, is a
    linear map applied to the cell-cost matrix before use. ``quiet``
    keeps horizon warnings in the report without logging them.
    """
    if method not in ("newton", "projection"):
        raise ValueError(f"unknown method {method!r}")
    H = default_horizon_end(net, spec.tf) if horizon_end is None else horizon_end
    window = arrival_window(net, spec.t0, H)
    rate_bound = flow_bound_constant(net, penalty, window)
    h = spec.uniform() if h0 is None else h0
    if h.n_cells != spec.n_cells:
        raise ValueError("initial flow is on a different grid")
    od_of_row = np.repeat(
        [next(j for j, rows in enumerate(spec.groups) if r in rows) for r in range(len(spec.path_ids))],
        spec.n_cells)
    history = []
    converged = False

    def cost_map(hn):
        rn = load_network(net, hn, H)
        pn = cell_average_psi(net, hn, penalty, result=rn)
        return rn, (pn if cost_transform is None else cost_transform(pn))

    def evaluate(hn):
        rn, pn = cost_map(hn)
        return rn, pn, equilibrium_gap(hn, pn, spec)

    result, psi_bar, (abs_gap, rel_gap, costs) = evaluate(h)
    if alpha0 is None:
        alpha0 = default_alpha0(spec, psi_bar)

    k = 0
    while True:
        history.append((k, abs_gap, rel_gap))
        if callback is not None:
            callback(k, h, psi_bar, rel_gap)
        if rel_gap <= tol:
            converged = True
            break
        if k >= max_iter - 1:
            break
        if method == "projection":
            alpha = alpha0 / (1.0 + k / step_decay)
            h = project_feasible(h.rates - alpha * psi_bar, spec)
            result, psi_bar, (abs_gap, rel_gap, costs) = evaluate(h)
        else:
            step = _newton_step(cost_map, h, psi_bar, rel_gap, spec, od_of_row, alpha0)
            if step is None:
                alpha = alpha0 / (1.0 + k / step_decay)
                hn = project_feasible(h.rates - alpha * psi_bar, spec)
                step = (hn, *evaluate(hn))
            hn, rn, pn, gn = step
            h, result, psi_bar = hn, rn, pn
            abs_gap, rel_gap, costs = gn
        k += 1

    warnings = []
    for od, rows, q in zip(spec.od_ids, spec.groups, spec.demands):
        rates = h.rates[list(rows)]
        thr = 1e-2 * q / (spec.tf - spec.t0)
        if np.any(rates[:, 0] > thr) or np.any(rates[:, -1] > thr):
            msg = f"OD {od}: equilibrium uses the first or last cell; the horizon may be too short"
            if not quiet:
                logger.warning(msg)
            warnings.append(msg)
    return SolverReport(
        flows=h,
        od_ids=spec.od_ids,
        od_costs=tuple(costs),
        gap_history=history,
        converged=converged,
        psi_bar=psi_bar,
        spec=spec,
        rate_bound=rate_bound,
        delay_bounds=delay_upper_bound(net),
        max_delays={p: float(result.path_delay[p].v.max()) for p in net.path_ids},
        used_cell_deviation=_used_cell_deviation(h, psi_bar, spec, costs),
        alpha0=float(alpha0),
        method=method,
        warnings=warnings,
    )


def _pair_average(psi):
    avg = 0.5 * (psi[:, ::2] + psi[:, 1::2])
    return np.repeat(avg, 2, axis=1)


def solve_refined(net: Network, coarse: SolverReport, penalty: Penalty, stages=4, tol=1e-3,
                  max_iter=2000, horizon_end=None, alpha0=None):
    """Re-solve on the next finer grid, starting from a coarse solution.

    The refined coarse flows solve the fine problem exactly when each cell
    cost is replaced by the mean over its sibling cell. The costs are blended
    from those means to the true costs over ``stages`` steps and each blend
    is solved from the previous one, which follows the coarse equilibrium
    instead of jumping to another one. Returns the final report with the
    gap history of all stages concatenated.
    """
    spec = coarse.spec.at_level(coarse.spec.level + 1)
    h = refine(coarse.flows)
    history = []
    report = None
    for j in range(1, stages + 1):
        lam = j / stages
        # leave every later stage its share of the iteration budget
        budget = max(1, (max_iter - len(history)) // (stages - j + 1))
        report = solve_fixed_point(
            net, spec, penalty, alpha0=alpha0, tol=tol if j == stages else 0.1 * tol, max_iter=budget,
            horizon_end=horizon_end, h0=h, quiet=j < stages,
            cost_transform=None if j == stages else (lambda p, lam=lam: lam * p + (1 - lam) * _pair_average(p)))
        h = report.flows
        offset = len(history)
        history.extend((offset + i, a, r) for i, a, r in report.gap_history)
    report.gap_history = history
    report.converged = report.converged and len(history) <= max_iter
    return report


@dataclass(frozen=True)
class Verification:
    passed: bool
    failures: tuple
    details: dict


def verify_due(report: SolverReport, eps=1e-2) -> Verification:
    """Check the discrete equilibrium condition on a solver report.

    Every cell with rate above ``eps * Q / (tf - t0)`` must have cost within
    ``eps * max(1, v)`` of the OD minimum ``v``; the largest rate must stay
    below the a priori flow bound and every path delay below its ceiling.
    """
    spec, h, psi_bar = report.spec, report.flows, report.psi_bar
    failures = []
    details = {}
    for od, rows, q, v in zip(spec.od_ids, spec.groups, spec.demands, report.od_costs):
        thr = eps * q / (spec.tf - spec.t0)
        worst = 0.0
        for r in rows:
            for k in np.nonzero(h.rates[r] > thr)[0]:
                dev = abs(psi_bar[r, k] - v)
                worst = max(worst, dev)
                if dev > eps * max(1.0, v):
                    failures.append(
                        f"OD {od}: path {spec.path_ids[r]} cell {k} carries rate {h.rates[r, k]:.6g} "
                        f"at cost {psi_bar[r, k]:.6g} vs equilibrium cost {v:.6g}")
        details[od] = {"cost": v, "max_used_deviation": worst}
    if report.max_rate > report.rate_bound:
        failures.append(f"max cell rate {report.max_rate:.6g} exceeds flow bound {report.rate_bound:.6g}")
    for p, d in report.max_delays.items():
        if d > report.delay_bounds[p] * (1 + 1e-12):
            failures.append(f"path {p}: delay {d:.6g} exceeds bound {report.delay_bounds[p]:.6g}")
    return Verification(not failures, tuple(failures), details)


def deviation_gain(net, report: SolverReport, penalty, fraction=0.01, horizon_end=None):
    """Largest cost saving available to a small group of deviating travellers.

    For every used cell, ``fraction`` of its mass is moved to each other cell
    of the same OD pair; the saving is the equilibrium cost minus the cost the
    moved mass sees at its new cell after reloading. A discrete equilibrium
    admits no positive saving beyond the first-order effect of the move.
    """
    spec, h = report.spec, report.flows
    best = -math.inf
    for rows, q, v in zip(spec.groups, spec.demands, report.od_costs):
        rows = list(rows)
        thr = 1e-2 * q / (spec.tf - spec.t0)
        for r in rows:
            for k in np.nonzero(h.rates[r] > thr)[0]:
                for r2 in rows:
                    for k2 in range(spec.n_cells):
                        if (r2, k2) == (r, k):
                            continue
                        rates = h.rates.copy()
                        moved = fraction * rates[r, k]
                        rates[r, k] -= moved
                        rates[r2, k2] += moved
                        hp = PathFlowVector(h.path_ids, h.t0, h.tf, rates)
                        pb = cell_average_psi(net, hp, penalty, horizon_end)
                        best = max(best, v - float(pb[r2, k2]))
    return best
