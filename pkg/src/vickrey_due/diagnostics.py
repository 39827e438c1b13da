"""Invariant checks on loaded networks, used by ``validate`` and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loading import LoadingResult, PathFlowVector, delay_upper_bound, load_network
from .network import Network
from .penalty import Penalty, effective_path_delay
from .pwl import sup_distance


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    limit: float
    note: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.note})" if self.note else ""
        return f"{status}  {self.name:<20} measured={self.value:.6g} limit={self.limit:.6g}{extra}"


def fifo_violation(result: LoadingResult) -> float:
    """Largest backward step of any arc or path exit-time curve (0 when FIFO holds)."""
    worst = 0.0
    curves = [ld.state.tau for ld in result.arcs.values()] + list(result.path_exit.values())
    for c in curves:
        if c.v.size > 1:
            worst = max(worst, float(-np.min(np.diff(c.v))))
    return worst


def conservation_error(net: Network, h: PathFlowVector, result: LoadingResult) -> float:
    """Largest mass-balance residual relative to ``max(1, total demand)``.

    Covers per-arc entries = exits + queue at every multiple of the shortest
    free-flow time, aggregation of per-path curves, and per-path terminal mass.
    """
    scale = max(1.0, net.total_demand)
    step = min(a.free_flow_time for a in net.arcs.values())
    t0, H = result.t0, result.horizon_end
    err = 0.0
    for a, ld in result.arcs.items():
        st = ld.state
        T = st.params.free_flow_time
        edges = t0 + step * np.arange(int(np.floor((H + T - t0) / step)) + 1)
        edges = np.append(edges, H + T)
        inflow = np.where(edges - T >= t0, st.U(np.clip(edges - T, t0, H)), 0.0)
        err = max(err, float(np.max(np.abs(inflow - st.W(edges) - st.q(edges)))))
        grid = np.union1d(st.U.t, st.W.t)
        if ld.entries:
            err = max(err, float(np.max(np.abs(sum(c(grid) for c in ld.entries.values()) - st.U(grid)))))
            err = max(err, float(np.max(np.abs(sum(c(grid) for c in ld.exits.values()) - st.W(grid)))))
    for pid, p in net.paths.items():
        last = result.arcs[p.arcs[-1]]
        err = max(err, abs(float(last.exits[pid].v[-1]) - h.volume(pid)))
    return err / scale


def delay_bound_excess(net: Network, result: LoadingResult) -> float:
    """``max_p (max_t D_p(t) - bound_p)``; nonpositive when every bound holds."""
    bounds = delay_upper_bound(net)
    return max(float(result.path_delay[p].v.max()) - bounds[p] for p in net.path_ids)


def continuity_probe(net: Network, h: PathFlowVector, penalty: Penalty, direction, horizon_end,
                     steps=6, tol=1e-10):
    """Sup distances of every path's effective delay at ``h + 2**-nu * direction`` to that at ``h``.

    Returns an array over ``nu = 1..steps`` of the largest distance over paths.
    """
    base_res = load_network(net, h, horizon_end)
    base = {p: effective_path_delay(base_res, p, penalty).to_pwl(tol) for p in net.path_ids}
    out = []
    for nu in range(1, steps + 1):
        hn = PathFlowVector(h.path_ids, h.t0, h.tf, h.rates + 2.0 ** -nu * np.asarray(direction))
        res = load_network(net, hn, horizon_end)
        out.append(max(sup_distance(effective_path_delay(res, p, penalty).to_pwl(tol), base[p])
                       for p in net.path_ids))
    return np.array(out)


def monotone_within(values, slack=0.05) -> bool:
    values = np.asarray(values, dtype=float)
    return bool(np.all(values[1:] <= values[:-1] * (1.0 + slack) + 1e-15))
