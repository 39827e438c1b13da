"""Arrival penalties and the effective path delay.

The effective delay of departing at ``t`` on path ``p`` is the travel time
plus a schedule penalty on the arrival offset from the target time::

    Psi_p(t) = D_p(t) + F(t + D_p(t) - T_A)

Both penalty families are piecewise quadratic in the offset, and ``D_p`` is
piecewise linear, so ``Psi_p`` is piecewise quadratic in ``t`` between known
breakpoints. Cell integrals are therefore exact with Simpson's rule.
"""

from __future__ import annotations

import numpy as np

from .loading import LoadingResult
from .network import Network, f_max
from .pwl import PiecewiseLinearCurve

SLOPE_GRID = 10_000
SLOPE_MARGIN = 1e-6


class PenaltyError(ValueError):
    pass


class Penalty:
    """Base class for schedule penalties ``F(s)``, ``s`` = arrival minus target."""

    kind = "base"

    def __init__(self, target_arrival):
        self.target_arrival = float(target_arrival)

    def __call__(self, s):
        raise NotImplementedError

    def derivative(self, s):
        raise NotImplementedError

    def knots(self):
        """Offsets where the quadratic piece changes."""
        return np.empty(0)

    def min_derivative(self, lo, hi):
        """Closed-form minimum of ``F'`` on ``[lo, hi]``."""
        raise NotImplementedError

    def params(self):
        raise NotImplementedError

    def check_slope(self, window):
        """Check ``F' > -1`` on an arrival-time window; returns ``1 + min F'``.

        The minimum is taken over a fixed grid and the closed form, whichever
        is smaller, and must clear ``SLOPE_MARGIN``.
        """
        lo, hi = (w - self.target_arrival for w in window)
        s = np.linspace(lo, hi, SLOPE_GRID)
        slope = 1.0 + min(float(np.min(self.derivative(s))), self.min_derivative(lo, hi))
        if slope <= SLOPE_MARGIN:
            raise PenaltyError(
                f"{self.kind} penalty violates F' > -1 on arrival window "
                f"[{window[0]:g}, {window[1]:g}]: 1 + min F' = {slope:.6g}")
        return slope

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({inner})"


class QuadraticPenalty(Penalty):
    """``F(s) = coef * s**2``."""

    kind = "quadratic"

    def __init__(self, coef, target_arrival):
        if coef < 0:
            raise PenaltyError("quadratic coefficient must be nonnegative")
        super().__init__(target_arrival)
        self.coef = float(coef)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return self.coef * s * s

    def derivative(self, s):
        return 2.0 * self.coef * np.asarray(s, dtype=float)

    def min_derivative(self, lo, hi):
        return 2.0 * self.coef * lo

    def params(self):
        return {"coef": self.coef, "target_arrival": self.target_arrival}


class SmoothedLinearPenalty(Penalty):
    """Early/late linear penalty with a quadratic (Huber-type) rounding at zero.

    ``F(s) = -early * (s + w/2)`` for ``s < -w``, ``early * s**2 / (2w)`` on
    ``[-w, 0]``, ``late * s**2 / (2w)`` on ``[0, w]`` and ``late * (s - w/2)``
    beyond ``w``. It is continuously differentiable, nonnegative and zero at
    ``s = 0``; ``F' >= -early`` everywhere.
    """

    kind = "piecewise_linear_smoothed"

    def __init__(self, early, late, smoothing, target_arrival):
        if early < 0 or late < 0:
            raise PenaltyError("early and late coefficients must be nonnegative")
        if not smoothing > 0:
            raise PenaltyError("smoothing half-width must be positive")
        super().__init__(target_arrival)
        self.early = float(early)
        self.late = float(late)
        self.smoothing = float(smoothing)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        w, b, g = self.smoothing, self.early, self.late
        return np.select(
            [s < -w, s < 0, s <= w],
            [-b * (s + 0.5 * w), b * s * s / (2 * w), g * s * s / (2 * w)],
            g * (s - 0.5 * w),
        )

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        w = self.smoothing
        return np.where(s < 0, self.early * np.clip(s / w, -1.0, 0.0), self.late * np.clip(s / w, 0.0, 1.0))

    def knots(self):
        return np.array([-self.smoothing, 0.0, self.smoothing])

    def min_derivative(self, lo, hi):
        return float(self.derivative(lo))

    def params(self):
        return {"early": self.early, "late": self.late, "smoothing": self.smoothing,
                "target_arrival": self.target_arrival}


def make_penalty(spec, window=None) -> Penalty:
    """Build a penalty from its scenario description; validate on ``window`` if given."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    target = spec.pop("target_arrival", spec.pop("T_A", None))
    if target is None:
        raise PenaltyError("penalty needs a target_arrival")
    if kind == "quadratic":
        pen = QuadraticPenalty(spec.pop("coef", 0.0), target)
    elif kind == "piecewise_linear_smoothed":
        pen = SmoothedLinearPenalty(spec.pop("early"), spec.pop("late"), spec.pop("smoothing"), target)
    elif kind in ("none", "zero"):
        pen = QuadraticPenalty(0.0, target)
    else:
        raise PenaltyError(f"unknown penalty kind {kind!r}")
    if spec:
        raise PenaltyError(f"unexpected penalty parameters: {sorted(spec)}")
    if window is not None:
        pen.check_slope(window)
    return pen


def arrival_window(net: Network, t0, horizon_end):
    """Arrival times any vehicle can reach: ``[t0 + min T, horizon_end]``."""
    return (t0 + min(a.free_flow_time for a in net.arcs.values()), horizon_end)


def psi_min_prime(penalty: Penalty, window) -> float:
    """Smallest slope of the arrival cost ``t + F(t - T_A)`` on ``window``."""
    return penalty.check_slope(window)


def flow_bound_constant(net: Network, penalty: Penalty, window) -> float:
    """A priori ceiling on equilibrium departure rates: ``3 F_max / psi'_min``, padded by 1e-6."""
    return 3.0 * f_max(net) / psi_min_prime(penalty, window) * (1.0 + 1e-6)


def _preimages(curve: PiecewiseLinearCurve, levels):
    """Times where a nondecreasing curve crosses the given levels (strictly inside segments)."""
    t, v = curve.t, curve.v
    if t.size < 2 or len(levels) == 0:
        return np.empty(0)
    levels = np.asarray(levels, dtype=float)
    lo, hi = v[:-1, None], v[1:, None]
    inside = (levels[None, :] > lo) & (levels[None, :] < hi)
    k, j = np.nonzero(inside)
    y = levels[j]
    return t[k] + (y - v[k]) / (v[k + 1] - v[k]) * (t[k + 1] - t[k])


class EffectiveDelay:
    """``Psi_p(t) = D_p(t) + F(tau_p(t) - T_A)`` for one path on ``[t0, tf]``."""

    def __init__(self, delay: PiecewiseLinearCurve, exit_time: PiecewiseLinearCurve, penalty: Penalty):
        self.delay = delay
        self.exit_time = exit_time
        self.penalty = penalty
        knots = penalty.knots() + penalty.target_arrival
        t = np.union1d(np.union1d(delay.t, exit_time.t), _preimages(exit_time, knots))
        # Psi is exactly quadratic between consecutive entries of t
        self.t = t

    def __call__(self, t):
        return self.delay(t) + self.penalty(self.exit_time(t) - self.penalty.target_arrival)

    def cumulative_integral(self, points):
        """Exact ``integral of Psi from points[0]`` evaluated at each point."""
        points = np.asarray(points, dtype=float)
        t = np.union1d(self.t[(self.t > points[0]) & (self.t < points[-1])], points)
        a, b = t[:-1], t[1:]
        seg = (b - a) / 6.0 * (self(a) + 4.0 * self(0.5 * (a + b)) + self(b))
        acc = np.concatenate(([0.0], np.cumsum(seg)))
        return acc[np.searchsorted(t, points)]

    def integrate(self, a, b):
        if b <= a:
            return 0.0
        return float(self.cumulative_integral([a, b])[-1])

    def cell_averages(self, grid):
        grid = np.asarray(grid, dtype=float)
        return np.diff(self.cumulative_integral(grid)) / np.diff(grid)

    def to_pwl(self, tol=1e-10) -> PiecewiseLinearCurve:
        """Piecewise-linear interpolant within ``tol`` of ``Psi`` (sup norm).

        Each quadratic piece is split evenly so that ``|Psi''| h**2 / 8 <= tol``.
        """
        t = self.t
        pts = [t[:1]]
        for a, b in zip(t[:-1], t[1:]):
            m = 0.5 * (a + b)
            curv = abs(self(a) - 2.0 * self(m) + self(b)) * 4.0 / (b - a) ** 2
            n = max(1, int(np.ceil((b - a) * np.sqrt(curv / (8.0 * tol))))) if curv > 0 else 1
            pts.append(np.linspace(a, b, n + 1)[1:])
        tt = np.concatenate(pts)
        return PiecewiseLinearCurve.from_points(tt, self(tt))


def effective_path_delay(result: LoadingResult, path_id, penalty: Penalty) -> EffectiveDelay:
    return EffectiveDelay(result.path_delay[path_id], result.path_exit[path_id], penalty)


def psi_decomposition(result: LoadingResult, path_id, penalty: Penalty, tol=1e-10):
    """Split ``Psi_p`` into a departure cost ``-t`` and an arrival cost ``psi(tau_p(t))``.

    ``psi(s) = s + F(s - T_A)``. Returns both as piecewise-linear curves on
    ``[t0, tf]``; the arrival part is interpolated within ``tol``.
    """
    t0, tf = result.t0, result.tf
    phi = PiecewiseLinearCurve.linear(t0, tf, -1.0)
    arrival = _ArrivalCost(result.path_exit[path_id], penalty).to_pwl(tol)
    return phi, arrival


class _ArrivalCost(EffectiveDelay):
    def __init__(self, exit_time, penalty):
        super().__init__(exit_time, exit_time, penalty)

    def __call__(self, t):
        s = self.exit_time(t)
        return s + self.penalty(s - self.penalty.target_arrival)
