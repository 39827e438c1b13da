"""Dynamic network loading with point-queue arcs and FIFO path splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .link import LinkState, load_link, split_exit
from .network import Network
from .pwl import PiecewiseLinearCurve, StepProfile, compose, cumulative

MASS_RTOL = 1e-9


class LoadingError(RuntimeError):
    pass


class PathFlowVector:
    """Departure rates of every path on one common dyadic grid.

    ``rates[i, k]`` is the rate of path ``path_ids[i]`` on cell ``k``.
    """

    __slots__ = ("path_ids", "t0", "tf", "rates")

    def __init__(self, path_ids, t0, tf, rates):
        rates = np.array(rates, dtype=float, ndmin=2)
        if rates.shape[0] != len(path_ids):
            raise ValueError(f"expected {len(path_ids)} rows of rates, got {rates.shape[0]}")
        n = rates.shape[1]
        if n == 0 or n & (n - 1):
            raise ValueError(f"number of cells must be a power of two, got {n}")
        if not tf > t0:
            raise ValueError("need tf > t0")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ValueError("departure rates must be finite and nonnegative")
        rates.setflags(write=False)
        self.path_ids = tuple(path_ids)
        self.t0 = float(t0)
        self.tf = float(tf)
        self.rates = rates

    @classmethod
    def from_profiles(cls, profiles):
        """Build from a ``{path_id: StepProfile}`` mapping sharing one grid."""
        items = sorted(profiles.items())
        first = items[0][1]
        for pid, s in items:
            if (s.t0, s.tf, s.rates.size) != (first.t0, first.tf, first.rates.size):
                raise ValueError(f"profile of path {pid!r} is on a different grid")
        return cls([p for p, _ in items], first.t0, first.tf, [s.rates for _, s in items])

    @property
    def n_cells(self):
        return self.rates.shape[1]

    @property
    def level(self):
        return self.n_cells.bit_length() - 1

    @property
    def width(self):
        return (self.tf - self.t0) / self.n_cells

    @property
    def grid(self):
        return np.linspace(self.t0, self.tf, self.n_cells + 1)

    def profile(self, path_id):
        return StepProfile(self.t0, self.tf, self.rates[self.path_ids.index(path_id)])

    def volume(self, path_id):
        return float(self.rates[self.path_ids.index(path_id)].sum() * self.width)

    def __repr__(self):
        return f"PathFlowVector(paths={len(self.path_ids)}, level={self.level}, [{self.t0:g}, {self.tf:g}])"


@dataclass(frozen=True)
class ArcLoading:
    state: LinkState
    entries: dict
    exits: dict


@dataclass(frozen=True)
class LoadingResult:
    """Whole-network loading output.

    ``path_exit`` and ``path_delay`` are functions of departure time on
    ``[t0, tf]``.
    """

    arcs: dict
    path_exit: dict
    path_delay: dict
    t0: float
    tf: float
    horizon_end: float
    n_passes: int


def default_horizon_end(net: Network, tf):
    """Time by which every vehicle departing before ``tf`` has left the network."""
    fft = sum(a.free_flow_time for a in net.arcs.values())
    cap = min(a.capacity for a in net.arcs.values())
    return tf + fft + net.total_demand / cap


def _arc_order(net: Network):
    # arcs that appear early on paths first: one sweep settles acyclic networks
    pos = {a: math.inf for a in net.arcs}
    for p in net.paths.values():
        for k, a in enumerate(p.arcs):
            pos[a] = min(pos[a], k)
    return sorted(net.arcs, key=lambda a: (pos[a], a))


def load_network(net: Network, h: PathFlowVector, horizon_end=None) -> LoadingResult:
    """Propagate path departure rates through the network.

    Entries of an arc are known up to time ``s`` once every upstream arc has
    known exits up to ``s``; an arc whose entries are known up to ``s`` has
    exits known up to ``s + T``. Sweeping the arcs repeatedly therefore
    extends every arc's known window by at least ``min T`` per sweep without
    any fixed-point iteration, and acyclic networks finish in one sweep.
    """
    if tuple(sorted(h.path_ids)) != net.path_ids:
        raise ValueError("path flow vector does not match the network's paths")
    t0, tf = h.t0, h.tf
    H = default_horizon_end(net, tf) if horizon_end is None else float(horizon_end)
    if H < tf:
        raise ValueError("horizon_end must not precede tf")

    first_entry = {p: cumulative(h.profile(p)) for p in net.paths}
    users = {a: [] for a in net.arcs}
    prev_arc = {}
    for pid, p in net.paths.items():
        for k, a in enumerate(p.arcs):
            users[a].append(pid)
            prev_arc[(a, pid)] = p.arcs[k - 1] if k else None

    loaded_until = {a: -math.inf for a in net.arcs}
    exits_known = {a: t0 + net.arcs[a].free_flow_time for a in net.arcs}
    loads = {}
    order = _arc_order(net)
    passes = 0
    while any(loaded_until[a] < H for a in order):
        passes += 1
        progressed = False
        for a in order:
            s = H
            for pid in users[a]:
                b = prev_arc[(a, pid)]
                if b is not None:
                    s = min(s, exits_known[b])
            if s <= loaded_until[a]:
                continue
            entries = {}
            for pid in users[a]:
                b = prev_arc[(a, pid)]
                src = first_entry[pid] if b is None else loads[b].exits[pid]
                entries[pid] = src.truncate(s)
            if entries:
                U = entries[users[a][0]]
                for pid in users[a][1:]:
                    U = U + entries[pid]
            else:
                U = PiecewiseLinearCurve.constant(0.0, t0)
            state = load_link(U, net.arcs[a].params, t0, H)
            ex = split_exit(state, [entries[p] for p in users[a]])
            loads[a] = ArcLoading(state, entries, dict(zip(users[a], ex)))
            loaded_until[a] = s
            exits_known[a] = s + net.arcs[a].free_flow_time
            progressed = True
        if not progressed:
            raise LoadingError("network loading made no progress")

    for a, ld in loads.items():
        tq = ld.state.terminal_queue()
        if tq > MASS_RTOL * max(1.0, net.total_demand):
            raise LoadingError(
                f"horizon_end={H:g} is too short: arc {a!r} still holds {tq:.6g} vehicles")

    path_exit, path_delay = {}, {}
    for pid, p in net.paths.items():
        tau = PiecewiseLinearCurve.linear(t0, tf, 1.0)
        for a in p.arcs:
            tau = compose(loads[a].state.tau, tau)
        tau = tau.restrict(t0, tf).monotone()
        path_exit[pid] = tau
        path_delay[pid] = tau.minus_identity()
    return LoadingResult(loads, path_exit, path_delay, t0, tf, H, passes)


def path_delay(result: LoadingResult, path_id) -> PiecewiseLinearCurve:
    try:
        return result.path_delay[path_id]
    except KeyError:
        raise KeyError(f"unknown path {path_id!r}") from None


def path_exit_time(result: LoadingResult, path_id) -> PiecewiseLinearCurve:
    try:
        return result.path_exit[path_id]
    except KeyError:
        raise KeyError(f"unknown path {path_id!r}") from None


def delay_upper_bound(net: Network):
    """Flow-independent ceiling on each path delay: sum over its arcs of Q/M + T."""
    Q = net.total_demand
    return {
        pid: math.fsum(Q / net.arcs[a].capacity + net.arcs[a].free_flow_time for a in p.arcs)
        for pid, p in net.paths.items()
    }


def write_csvs(result: LoadingResult, out_dir):
    """Dump ``arc_<id>_<curve>.csv`` and ``path_<id>_<curve>.csv`` files."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for a, ld in result.arcs.items():
        st = ld.state
        for name in ("U", "W", "q", "D", "tau"):
            getattr(st, name).to_csv(out / f"arc_{a}_{name}.csv")
        for pid, c in ld.entries.items():
            c.to_csv(out / f"arc_{a}_U_{pid}.csv")
        for pid, c in ld.exits.items():
            c.to_csv(out / f"arc_{a}_W_{pid}.csv")
    for pid in result.path_exit:
        result.path_exit[pid].to_csv(out / f"path_{pid}_exit.csv")
        result.path_delay[pid].to_csv(out / f"path_{pid}_delay.csv")
