"""JSON scenario files.

A scenario bundles a network, a departure window, a schedule penalty, a
grid level, solver settings and optionally fixed path departure rates::

    {
      "schema_version": 1,
      "horizon": {"t0": 0, "tf": 8, "horizon_end": null},
      "arcs": [{"id": "a", "tail": "o", "head": "d", "capacity": 1, "free_flow_time": 1}],
      "paths": [{"id": "P1", "arcs": ["a"]}],
      "od_pairs": [{"origin": "o", "destination": "d", "demand": 2, "paths": ["P1"]}],
      "penalty": {"kind": "piecewise_linear_smoothed", "early": 0.5, "late": 2.0,
                  "smoothing": 0.25, "target_arrival": 3},
      "grid_level": 5,
      "solver": {"alpha0": null, "tol": 1e-3, "max_iter": 2000, "method": "newton"},
      "path_flows": {"P1": [2, 0]}
    }

``path_flows`` lists per-cell departure rates on an even split of
``[t0, tf]``; the cell count must be a power of two and equal for all paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .loading import PathFlowVector, default_horizon_end
from .network import Network, NetworkError, build_network
from .penalty import Penalty, PenaltyError, make_penalty

SCHEMA_VERSION = 1
SOLVER_DEFAULTS = {"alpha0": None, "tol": 1e-3, "max_iter": 2000, "method": "newton"}
_TOP_KEYS = {"schema_version", "name", "horizon", "arcs", "paths", "od_pairs", "penalty",
             "grid_level", "solver", "path_flows"}


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    network: Network
    t0: float
    tf: float
    penalty: Penalty | None
    grid_level: int
    solver: dict
    horizon_end: float
    path_flows: PathFlowVector | None = None
    name: str = ""
    raw: dict = field(default_factory=dict, repr=False)


def _number(value, where, errors, positive=False, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if integer:
        ok = ok and float(value).is_integer()
    if ok and positive and not value > 0:
        ok = False
    if not ok:
        kind = "integer" if integer else "number"
        errors.append(f"{where}: expected a {'positive ' if positive else ''}{kind}, got {value!r}")
        return None
    return int(value) if integer else float(value)


def parse_scenario(raw: dict) -> Scenario:
    """Validate a decoded scenario; every problem is reported in one :class:`ScenarioError`.

    The penalty is built but not checked against its arrival window here,
    so that ``validate`` can report that check on its own line.
    """
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    errors = []
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        errors.append(f"unknown top-level fields: {unknown}")

    hz = raw.get("horizon")
    t0 = tf = H = None
    if not isinstance(hz, dict):
        errors.append("horizon: expected an object with t0 and tf")
    else:
        t0 = _number(hz.get("t0"), "horizon.t0", errors)
        tf = _number(hz.get("tf"), "horizon.tf", errors)
        if t0 is not None and tf is not None and not tf > t0:
            errors.append(f"horizon: tf must exceed t0, got t0={t0:g}, tf={tf:g}")
            tf = None
        if hz.get("horizon_end") is not None:
            H = _number(hz["horizon_end"], "horizon.horizon_end", errors)

    level = _number(raw.get("grid_level", 5), "grid_level", errors, integer=True)
    if level is not None and level < 0:
        errors.append(f"grid_level: must be nonnegative, got {level}")

    solver = dict(SOLVER_DEFAULTS)
    given = raw.get("solver", {})
    if not isinstance(given, dict):
        errors.append("solver: expected an object")
        given = {}
    for k, v in given.items():
        if k not in SOLVER_DEFAULTS:
            errors.append(f"solver.{k}: unknown field")
        elif k == "method":
            if v not in ("newton", "projection"):
                errors.append(f"solver.method: expected 'newton' or 'projection', got {v!r}")
            solver[k] = v
        elif k == "max_iter":
            solver[k] = _number(v, "solver.max_iter", errors, positive=True, integer=True)
        elif v is not None:
            solver[k] = _number(v, f"solver.{k}", errors, positive=True)

    net = None
    try:
        net = build_network(raw)
    except NetworkError as exc:
        errors.extend(exc.errors)

    penalty = None
    if "penalty" in raw:
        try:
            penalty = make_penalty(raw["penalty"])
        except (PenaltyError, KeyError, TypeError) as exc:
            errors.append(f"penalty: {exc}")

    flows = None
    if raw.get("path_flows") is not None and net is not None and tf is not None:
        pf = raw["path_flows"]
        if not isinstance(pf, dict):
            errors.append("path_flows: expected an object mapping path id to rates")
        else:
            missing = sorted(set(net.path_ids) - set(pf))
            extra = sorted(set(pf) - set(net.path_ids))
            if missing:
                errors.append(f"path_flows: no rates for paths {missing}")
            if extra:
                errors.append(f"path_flows: unknown paths {extra}")
            if not missing and not extra:
                try:
                    flows = PathFlowVector(net.path_ids, t0, tf, [pf[p] for p in net.path_ids])
                except (ValueError, TypeError) as exc:
                    errors.append(f"path_flows: {exc}")

    if errors:
        raise ScenarioError("invalid scenario:\n  " + "\n  ".join(errors))
    if H is None:
        H = default_horizon_end(net, tf)
    elif H < tf:
        raise ScenarioError(f"horizon.horizon_end={H:g} precedes tf={tf:g}")
    return Scenario(net, t0, tf, penalty, level, solver, H, flows, str(raw.get("name", "")), raw)


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_scenario(raw)
