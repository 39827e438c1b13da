"""Point-queue (generalized Vickrey) dynamics of a single arc."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pwl import PiecewiseLinearCurve, StepProfile, lower_envelope_transform, sup_distance

QUEUE_TOL = 1e-9


@dataclass(frozen=True)
class LinkParams:
    capacity: float
    free_flow_time: float

    def __post_init__(self):
        if not (np.isfinite(self.capacity) and self.capacity > 0):
            raise ValueError(f"capacity must be positive and finite, got {self.capacity}")
        if not (np.isfinite(self.free_flow_time) and self.free_flow_time > 0):
            raise ValueError(f"free-flow time must be positive and finite, got {self.free_flow_time}")


@dataclass(frozen=True)
class LinkState:
    """Loading result of one arc.

    ``U`` and ``W`` are cumulative entries and exits, ``q`` the queue at the
    arc exit (a function of clock time), ``D`` and ``tau`` the delay and exit
    time of a vehicle as functions of its entry time.
    """

    params: LinkParams
    U: PiecewiseLinearCurve
    W: PiecewiseLinearCurve
    q: PiecewiseLinearCurve
    D: PiecewiseLinearCurve
    tau: PiecewiseLinearCurve
    t0: float
    horizon_end: float

    def terminal_queue(self):
        return float(self.U(self.horizon_end) - self.W(self.horizon_end + self.params.free_flow_time))


def load_link(U: PiecewiseLinearCurve, params: LinkParams, t0, horizon_end) -> LinkState:
    """Exit curve, queue, delay and exit-time map of a point-queue arc.

    With capacity ``M`` and free-flow time ``T``::

        W(t)   = min_{t0 <= s <= t-T} { U(s) + M (t - T - s) }     (t >= t0 + T)
        q(t)   = U(t - T) - W(t)
        D(t)   = T + q(t + T) / M
        tau(t) = t + D(t)

    ``W`` and ``q`` are returned on ``[t0, horizon_end + T]``, ``D`` and ``tau``
    on entry times ``[t0, horizon_end]``.
    """
    M, T = params.capacity, params.free_flow_time
    if horizon_end <= t0:
        raise ValueError("horizon_end must exceed t0")
    if not U.is_nondecreasing():
        raise ValueError("cumulative inflow must be nondecreasing")
    if abs(U(t0)) > QUEUE_TOL * max(1.0, abs(float(U.v[-1]))):
        raise ValueError(f"cumulative inflow must vanish at t0, got U(t0)={U(t0)}")
    U = U.restrict(t0, horizon_end).monotone()

    m = lower_envelope_transform(U, M, T, t0, horizon_end + T)
    W = PiecewiseLinearCurve(m.t, m.v + M * (m.t - T)).monotone()
    W = PiecewiseLinearCurve.from_points(np.concatenate(([t0], W.t)), np.concatenate(([0.0], W.v)))

    Ushift = U.shift(T)
    tq = np.union1d(W.t, Ushift.t)
    tq = tq[tq >= t0]
    qv = np.maximum(Ushift(tq) - W(tq), 0.0)
    q = PiecewiseLinearCurve.from_points(tq, qv)

    D = PiecewiseLinearCurve(q.t - T, T + q.v / M).restrict(t0, horizon_end).simplify()
    tau = D.plus_identity().monotone()
    return LinkState(params, U, W.simplify(), q.simplify(), D, tau, float(t0), float(horizon_end))


def split_exit(state: LinkState, per_path_U, rtol=1e-9):
    """Per-path cumulative exits under FIFO.

    A vehicle entering at ``s`` leaves at ``tau(s)``, so the path share of
    exits up to ``tau(s)`` equals its share of entries up to ``s``:
    ``W_p(tau(s)) = U_p(s)``. The curve is built parametrically over the
    merged breakpoints of ``tau`` and ``U_p``, which is exact because both are
    linear between them.
    """
    per_path_U = list(per_path_U)
    scale = max(1.0, float(state.U.v[-1]))
    if per_path_U:
        total = per_path_U[0]
        for u in per_path_U[1:]:
            total = total + u
        if sup_distance(total.restrict(state.t0, state.horizon_end), state.U) > rtol * scale:
            raise ValueError("per-path inflows do not sum to the arc inflow")
    tau = state.tau
    exits = []
    for Up in per_path_U:
        if not Up.is_nondecreasing():
            raise ValueError("per-path cumulative inflows must be nondecreasing")
        s = np.union1d(tau.t, Up.t)
        s = s[(s >= state.t0) & (s <= state.horizon_end)]
        y = tau(s)
        W = PiecewiseLinearCurve.from_points(y, Up(s)).monotone().simplify()
        exits.append(W)
    return exits


@dataclass(frozen=True)
class OdeTrajectory:
    t: np.ndarray
    W: np.ndarray
    q: np.ndarray
    D: np.ndarray


def ode_oracle(u: StepProfile, params: LinkParams, dt, horizon_end=None) -> OdeTrajectory:
    """Explicit time stepping of the point-queue ODE, for verification.

    Exit rate is ``min(u(t - T), M)`` while the queue is empty (within
    ``QUEUE_TOL`` vehicles) and ``M`` otherwise; the queue follows
    ``dq/dt = u(t - T) - w(t)``. ``D`` is sampled as ``T + q(t + T)/M``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    M, T = params.capacity, params.free_flow_time
    if horizon_end is None:
        horizon_end = u.tf + T + u.total() / M
    n = int(np.ceil((horizon_end + T - u.t0) / dt))
    t = u.t0 + dt * np.arange(n + 1)
    # inflow reaching the exit during [t_k, t_k + dt), sampled at the midpoint
    arriving = u.rate_at(t[:-1] - T + 0.5 * dt) * dt
    Mdt = M * dt
    q = np.zeros(n + 1)
    W = np.zeros(n + 1)
    qk = wk = 0.0
    for k in range(n):
        a = float(arriving[k])
        if qk <= QUEUE_TOL:
            out = min(a, Mdt)
        else:
            out = min(Mdt, qk + a)
        qk = qk + a - out
        wk += out
        q[k + 1] = qk
        W[k + 1] = wk
    D = T + np.interp(t + T, t, q) / M
    return OdeTrajectory(t, W, q, D)
