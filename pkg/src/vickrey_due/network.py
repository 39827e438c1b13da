"""Static network description: arcs, paths, origin-destination demand."""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from .link import LinkParams


class NetworkError(ValueError):
    """Raised by :func:`build_network`; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid network:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class Arc:
    id: str
    tail: str
    head: str
    params: LinkParams

    @property
    def capacity(self):
        return self.params.capacity

    @property
    def free_flow_time(self):
        return self.params.free_flow_time


@dataclass(frozen=True)
class Path:
    id: str
    arcs: tuple


@dataclass(frozen=True)
class ODPair:
    id: str
    origin: str
    destination: str
    demand: float
    paths: tuple


@dataclass(frozen=True, eq=False)
class Network:
    """Validated, canonically ordered network (everything sorted by id)."""

    arcs: MappingProxyType
    paths: MappingProxyType
    od_pairs: tuple
    nodes: frozenset

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (dict(self.arcs) == dict(other.arcs) and dict(self.paths) == dict(other.paths)
                and self.od_pairs == other.od_pairs and self.nodes == other.nodes)

    def __hash__(self):
        return hash((tuple(self.arcs), tuple(self.paths), self.od_pairs))

    @property
    def path_ids(self):
        return tuple(self.paths)

    @property
    def arc_ids(self):
        return tuple(self.arcs)

    @property
    def total_demand(self):
        return math.fsum(od.demand for od in self.od_pairs)

    def od_of(self, path_id):
        for od in self.od_pairs:
            if path_id in od.paths:
                return od
        raise KeyError(path_id)

    def path_index(self, path_id):
        return self.path_ids.index(path_id)

    def incidence_matrix(self):
        """``delta[a, p]`` with arcs and paths in canonical order."""
        arc_pos = {a: i for i, a in enumerate(self.arcs)}
        delta = np.zeros((len(self.arcs), len(self.paths)), dtype=int)
        for j, p in enumerate(self.paths.values()):
            for a in p.arcs:
                delta[arc_pos[a], j] = 1
        return delta


def _positive(x):
    try:
        x = float(x)
    except (TypeError, ValueError):
        return False
    return math.isfinite(x) and x > 0


def build_network(raw) -> Network:
    """Validate a raw description and return a :class:`Network`.

    ``raw`` has keys ``arcs`` (``id, tail, head, capacity, free_flow_time``),
    ``paths`` (``id, arcs``) and ``od_pairs`` (``origin, destination, demand,
    paths`` and an optional ``id``). Every problem found is reported at once
    through :class:`NetworkError`.
    """
    errors = []
    arcs = {}
    for i, a in enumerate(raw.get("arcs", [])):
        aid = str(a.get("id", f"#{i}"))
        if aid in arcs:
            errors.append(f"duplicate arc id {aid!r}")
            continue
        cap, fft = a.get("capacity"), a.get("free_flow_time")
        bad = False
        if not _positive(cap):
            errors.append(f"arc {aid!r}: capacity must be positive, got {cap!r}")
            bad = True
        if not _positive(fft):
            errors.append(f"arc {aid!r}: free_flow_time must be positive, got {fft!r}")
            bad = True
        if "tail" not in a or "head" not in a:
            errors.append(f"arc {aid!r}: missing tail/head node")
            bad = True
        if bad:
            arcs[aid] = None
            continue
        arcs[aid] = Arc(aid, str(a["tail"]), str(a["head"]), LinkParams(float(cap), float(fft)))
    if not arcs:
        errors.append("network has no arcs")

    paths = {}
    for i, p in enumerate(raw.get("paths", [])):
        pid = str(p.get("id", f"#{i}"))
        if pid in paths:
            errors.append(f"duplicate path id {pid!r}")
            continue
        seq = tuple(str(a) for a in p.get("arcs", []))
        paths[pid] = Path(pid, seq)
        if not seq:
            errors.append(f"path {pid!r} has no arcs")
            continue
        if len(set(seq)) != len(seq):
            errors.append(f"path {pid!r} uses an arc more than once (paths must be simple)")
        unknown = [a for a in seq if a not in arcs]
        for a in unknown:
            errors.append(f"path {pid!r} references unknown arc {a!r}")
        if unknown:
            continue
        for k in range(len(seq) - 1):
            a, b = arcs[seq[k]], arcs[seq[k + 1]]
            if a is not None and b is not None and a.head != b.tail:
                errors.append(
                    f"path {pid!r} is broken at position {k}: arc {a.id!r} ends at {a.head!r} "
                    f"but arc {b.id!r} starts at {b.tail!r}")

    ods = {}
    owner = {}
    for i, od in enumerate(raw.get("od_pairs", [])):
        o, d = str(od.get("origin")), str(od.get("destination"))
        oid = str(od.get("id", f"{o}->{d}"))
        if oid in ods:
            errors.append(f"duplicate OD pair {oid!r}")
            continue
        q = od.get("demand")
        if not _positive(q):
            errors.append(f"OD pair {oid!r}: demand must be positive, got {q!r}")
        plist = tuple(str(p) for p in od.get("paths", []))
        if not plist:
            errors.append(f"OD pair {oid!r} has an empty path set")
        for pid in plist:
            if pid not in paths:
                errors.append(f"OD pair {oid!r} references unknown path {pid!r}")
                continue
            if pid in owner:
                errors.append(f"path {pid!r} belongs to both {owner[pid]!r} and {oid!r}")
                continue
            owner[pid] = oid
            seq = paths[pid].arcs
            if seq and all(arcs.get(a) is not None for a in seq):
                if arcs[seq[0]].tail != o or arcs[seq[-1]].head != d:
                    errors.append(f"path {pid!r} does not connect {o!r} to {d!r}")
        ods[oid] = ODPair(oid, o, d, float(q) if _positive(q) else 0.0, tuple(sorted(plist)))
    for pid in paths:
        if pid not in owner:
            errors.append(f"path {pid!r} is not assigned to any OD pair")

    if errors:
        raise NetworkError(errors)
    nodes = frozenset(n for a in arcs.values() for n in (a.tail, a.head))
    return Network(
        arcs=MappingProxyType(dict(sorted(arcs.items()))),
        paths=MappingProxyType(dict(sorted(paths.items()))),
        od_pairs=tuple(sorted(ods.values(), key=lambda od: od.id)),
        nodes=nodes,
    )


def incidence(net: Network, arc_id, path_id) -> int:
    if arc_id not in net.arcs:
        raise KeyError(f"unknown arc {arc_id!r}")
    if path_id not in net.paths:
        raise KeyError(f"unknown path {path_id!r}")
    return int(arc_id in net.paths[path_id].arcs)


def f_max(net: Network) -> float:
    """Largest arc capacity."""
    return max(a.capacity for a in net.arcs.values())
