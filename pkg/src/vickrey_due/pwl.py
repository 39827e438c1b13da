"""Exact algebra on piecewise-linear curves and piecewise-constant rate profiles.

Every curve produced by network loading (cumulative counts, exit curves,
queues, delays, exit-time maps) is continuous and piecewise linear when the
departure rates are piecewise constant, so all loading work reduces to the
operations in this module. Curves are immutable and extrapolate constantly
outside ``[t[0], t[-1]]``.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

TIME_TOL = 1e-12


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class PiecewiseLinearCurve:
    """Continuous piecewise-linear function given by breakpoints.

    Parameters
    ----------
    t : array_like
        Strictly increasing breakpoint times.
    v : array_like
        Values at the breakpoints.
    """

    __slots__ = ("t", "v")

    def __init__(self, t, v):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError("breakpoints and values must be 1-d arrays of equal length")
        if t.size == 0:
            raise ValueError("a curve needs at least one breakpoint")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("breakpoints and values must be finite")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        self.t = _readonly(t)
        self.v = _readonly(v)

    @classmethod
    def from_points(cls, t, v, tol=TIME_TOL):
        """Build a curve from sorted, possibly near-duplicate points.

        Points closer than ``tol`` in time are merged, keeping the later value.
        """
        t = np.asarray(t, dtype=float)
        v = np.asarray(v, dtype=float)
        if t.size > 1:
            order = np.argsort(t, kind="stable")
            t, v = t[order], v[order]
            keep = np.ones(t.size, dtype=bool)
            # keep the last member of each cluster of near-equal times
            keep[:-1] = np.diff(t) > tol
            t, v = t[keep], v[keep]
        return cls(t, v)

    @classmethod
    def constant(cls, value, t=0.0):
        return cls([t], [value])

    @classmethod
    def linear(cls, a, b, slope, intercept=0.0):
        """The line ``slope * t + intercept`` on ``[a, b]``."""
        return cls([a, b], [slope * a + intercept, slope * b + intercept])

    # -- basic queries -----------------------------------------------------

    def __call__(self, t):
        return np.interp(t, self.t, self.v)

    def __len__(self):
        return self.t.size

    def __repr__(self):
        return f"PiecewiseLinearCurve(n={self.t.size}, domain=[{self.t[0]:g}, {self.t[-1]:g}])"

    @property
    def domain(self):
        return float(self.t[0]), float(self.t[-1])

    @property
    def slopes(self):
        return np.diff(self.v) / np.diff(self.t)

    def is_nondecreasing(self, tol=1e-12):
        scale = max(1.0, float(np.max(np.abs(self.v))))
        return bool(np.all(np.diff(self.v) >= -tol * scale))

    def has_jumps(self, tol=TIME_TOL):
        """True if two consecutive breakpoints are closer than ``tol``."""
        return bool(np.any(np.diff(self.t) <= tol))

    # -- arithmetic ----------------------------------------------------------

    def _merged_times(self, other):
        return np.union1d(self.t, other.t)

    def __add__(self, other):
        if isinstance(other, PiecewiseLinearCurve):
            t = self._merged_times(other)
            return PiecewiseLinearCurve.from_points(t, self(t) + other(t))
        return PiecewiseLinearCurve(self.t, self.v + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, PiecewiseLinearCurve):
            t = self._merged_times(other)
            return PiecewiseLinearCurve.from_points(t, self(t) - other(t))
        return PiecewiseLinearCurve(self.t, self.v - float(other))

    def __neg__(self):
        return PiecewiseLinearCurve(self.t, -self.v)

    def __mul__(self, c):
        return PiecewiseLinearCurve(self.t, self.v * float(c))

    __rmul__ = __mul__

    def shift(self, dt):
        """Return ``t -> f(t - dt)``."""
        return PiecewiseLinearCurve(self.t + dt, self.v)

    def plus_identity(self):
        """Return ``t -> t + f(t)``; exact because the identity is linear."""
        return PiecewiseLinearCurve(self.t, self.v + self.t)

    def minus_identity(self):
        return PiecewiseLinearCurve(self.t, self.v - self.t)

    def restrict(self, a, b):
        """Curve that agrees with ``self`` on ``[a, b]`` and is constant outside."""
        inner = (self.t > a + TIME_TOL) & (self.t < b - TIME_TOL)
        if b - a <= TIME_TOL:
            return PiecewiseLinearCurve([a], [self(a)])
        t = np.concatenate(([a], self.t[inner], [b]))
        return PiecewiseLinearCurve(t, self(t))

    def truncate(self, s):
        """Freeze the curve after time ``s`` (keep the domain start)."""
        if s >= self.t[-1]:
            return self
        start = min(self.t[0], s)
        return self.restrict(start, s) if s > start + TIME_TOL else PiecewiseLinearCurve([s], [self(s)])

    def extend_to(self, a, b):
        """Add explicit breakpoints at ``a`` and ``b`` (values from extrapolation)."""
        t = np.union1d(self.t, [a, b])
        return PiecewiseLinearCurve.from_points(t, self(t))

    def monotone(self):
        """Remove round-off decreases from a curve that should be nondecreasing."""
        return PiecewiseLinearCurve(self.t, np.maximum.accumulate(self.v))

    def simplify(self, tol=1e-12):
        """Drop interior breakpoints that are collinear with their neighbours."""
        if self.t.size < 3:
            return self
        t, v = self.t, self.v
        scale = max(1.0, float(np.max(np.abs(v))))
        w = (t[1:-1] - t[:-2]) / (t[2:] - t[:-2])
        mid = v[:-2] + w * (v[2:] - v[:-2])
        keep = np.ones(t.size, dtype=bool)
        keep[1:-1] = np.abs(v[1:-1] - mid) > tol * scale
        return PiecewiseLinearCurve(t[keep], v[keep])

    # -- export ----------------------------------------------------------------

    def to_csv(self, path):
        """Write ``t,value`` rows, one per breakpoint, 12 significant digits."""
        lines = ["t,value"]
        lines += [f"{a:.12g},{b:.12g}" for a, b in zip(self.t, self.v)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


class StepProfile:
    """Piecewise-constant nonnegative rate on a uniform dyadic grid.

    ``rates[k]`` applies on ``[t0 + k*width, t0 + (k+1)*width)`` and the rate
    is zero outside ``[t0, tf)``.
    """

    __slots__ = ("t0", "tf", "rates")

    def __init__(self, t0, tf, rates):
        rates = np.atleast_1d(np.asarray(rates, dtype=float))
        if not tf > t0:
            raise ValueError(f"need tf > t0, got [{t0}, {tf}]")
        if rates.ndim != 1:
            raise ValueError("rates must be 1-d")
        n = rates.size
        if n == 0 or n & (n - 1):
            raise ValueError(f"number of cells must be a power of two, got {n}")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ValueError("rates must be finite and nonnegative")
        self.t0 = float(t0)
        self.tf = float(tf)
        self.rates = _readonly(rates)

    @property
    def level(self):
        return self.rates.size.bit_length() - 1

    @property
    def width(self):
        return (self.tf - self.t0) / self.rates.size

    @property
    def grid(self):
        return np.linspace(self.t0, self.tf, self.rates.size + 1)

    def rate_at(self, t):
        t = np.asarray(t, dtype=float)
        k = np.floor((t - self.t0) / self.width).astype(int)
        inside = (k >= 0) & (k < self.rates.size)
        return np.where(inside, self.rates[np.clip(k, 0, self.rates.size - 1)], 0.0)

    def total(self):
        return float(self.rates.sum() * self.width)

    def __repr__(self):
        return f"StepProfile(level={self.level}, [{self.t0:g}, {self.tf:g}])"


def cumulative(s: StepProfile) -> PiecewiseLinearCurve:
    """Cumulative count ``U(t) = integral of s from t0 to t``."""
    values = np.concatenate(([0.0], np.cumsum(s.rates * s.width)))
    return PiecewiseLinearCurve(s.grid, values)


def compose(f: PiecewiseLinearCurve, g: PiecewiseLinearCurve) -> PiecewiseLinearCurve:
    """Exact representation of ``f(g(t))`` for nondecreasing ``g``.

    The result has breakpoints at the breakpoints of ``g`` plus the
    preimages under ``g`` of the breakpoints of ``f``.
    """
    if not g.is_nondecreasing():
        raise ValueError("compose requires a nondecreasing inner curve")
    gt, gv = g.t, g.v
    y = f.t[(f.t > gv[0]) & (f.t < gv[-1])]
    extra = np.empty(0)
    if y.size and gt.size > 1:
        k = np.searchsorted(gv, y, side="right") - 1
        k = np.clip(k, 0, gt.size - 2)
        lo, hi = gv[k], gv[k + 1]
        ok = (y > lo) & (y < hi)
        k, y, lo, hi = k[ok], y[ok], lo[ok], hi[ok]
        extra = gt[k] + (y - lo) / (hi - lo) * (gt[k + 1] - gt[k])
    t = np.union1d(gt, extra)
    return PiecewiseLinearCurve.from_points(t, f(g(t)))


def running_min(f: PiecewiseLinearCurve, a, b) -> PiecewiseLinearCurve:
    """``t -> min_{a <= s <= t} f(s)`` on ``[a, b]``, exact.

    Where ``f`` dips below the running minimum inside a segment, the crossing
    point is inserted as a breakpoint.
    """
    g = f.restrict(a, b)
    t, r = g.t, g.v
    m = np.minimum.accumulate(r)
    if t.size == 1:
        return PiecewiseLinearCurve(t, m)
    prev = m[:-1]
    cross = (r[1:] < prev) & (r[:-1] > prev)
    k = np.nonzero(cross)[0]
    tc = t[k] + (prev[k] - r[k]) / (r[k + 1] - r[k]) * (t[k + 1] - t[k])
    tt = np.concatenate((t, tc))
    vv = np.concatenate((m, prev[k]))
    order = np.argsort(tt, kind="stable")
    return PiecewiseLinearCurve.from_points(tt[order], vv[order])


def lower_envelope_transform(U: PiecewiseLinearCurve, M, T, t0, horizon_end=None):
    """Running minimum ``m(t) = min_{t0 <= s <= t - T} (U(s) - M s)``.

    Returned on ``[t0 + T, horizon_end]``; ``horizon_end`` defaults to the last
    breakpoint of ``U`` plus ``T``.
    """
    if M <= 0:
        raise ValueError(f"capacity must be positive, got {M}")
    if T <= 0:
        raise ValueError(f"free-flow time must be positive, got {T}")
    if horizon_end is None:
        horizon_end = max(U.t[-1], t0) + T
    s_end = max(horizon_end - T, t0)
    # U(s) - M s is piecewise linear with the breakpoints of U
    ext = U.extend_to(t0, s_end)
    R = PiecewiseLinearCurve(ext.t, ext.v - M * ext.t)
    return running_min(R, t0, s_end).shift(T)


def generalized_inverse(f: PiecewiseLinearCurve) -> PiecewiseLinearCurve:
    """Left-continuous inverse ``y -> inf{t : f(t) >= y}`` of a nondecreasing curve.

    A flat of ``f`` at level ``y0`` over ``[t1, t2]`` maps ``y0`` to ``t1``; the
    jump to ``t2`` is placed one floating-point step above ``y0``.
    """
    if not f.is_nondecreasing():
        raise ValueError("generalized_inverse requires a nondecreasing curve")
    v = np.maximum.accumulate(f.v)
    t = f.t
    ys, ts = [float(v[0])], [float(t[0])]
    i, n = 1, v.size
    while i < n:
        if v[i] <= ys[-1]:
            # still on a flat: find its right end
            j = i
            while j + 1 < n and v[j + 1] <= ys[-1]:
                j += 1
            if j + 1 < n:
                ys.append(float(np.nextafter(ys[-1], np.inf)))
                ts.append(float(t[j]))
            i = j + 1
            continue
        ys.append(float(v[i]))
        ts.append(float(t[i]))
        i += 1
    return PiecewiseLinearCurve(ys, ts)


def integrate(f: PiecewiseLinearCurve, a, b) -> float:
    """Exact integral of ``f`` over ``[a, b]`` (trapezoid rule per segment)."""
    if b < a:
        raise ValueError("integrate needs a <= b")
    if b == a:
        return 0.0
    t = np.union1d(f.t[(f.t > a) & (f.t < b)], [a, b])
    return float(np.trapezoid(f(t), t))


def sup_distance(f: PiecewiseLinearCurve, g: PiecewiseLinearCurve) -> float:
    t = np.union1d(f.t, g.t)
    return float(np.max(np.abs(f(t) - g(t))))


def l2_distance(f: PiecewiseLinearCurve, g: PiecewiseLinearCurve, a, b) -> float:
    """L2 distance on ``[a, b]``, integrating the squared difference in closed form."""
    if b <= a:
        return 0.0
    t = np.union1d(np.union1d(f.t, g.t), [a, b])
    t = t[(t >= a) & (t <= b)]
    d = f(t) - g(t)
    h = np.diff(t)
    d0, d1 = d[:-1], d[1:]
    return math.sqrt(float(np.sum(h * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0)))
