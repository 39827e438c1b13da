"""Estimator-style wrappers around loading and equilibrium solving."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .loading import PathFlowVector, default_horizon_end
from .solver import FeasibleSetSpec, cell_average_psi, refine, solve_fixed_point, solve_refined
from .validation import check_network, check_penalty, check_rate_matrix


class NetworkLoader(TransformerMixin, BaseEstimator):
    """Map path departure rates to cell-averaged effective delays.

    ``transform`` takes rows of flattened ``(n_paths, n_cells)`` rate arrays
    (paths in id order) and returns rows of the same shape holding the cell
    averages of each path's effective delay.
    """

    def __init__(self, network=None, penalty=None, t0=0.0, tf=1.0, horizon_end=None):
        self.network = network
        self.penalty = penalty
        self.t0 = t0
        self.tf = tf
        self.horizon_end = horizon_end

    def fit(self, X=None, y=None):
        self.network_ = check_network(self.network)
        self.penalty_ = check_penalty(self.penalty, target_arrival=self.tf)
        self.horizon_end_ = (default_horizon_end(self.network_, self.tf)
                             if self.horizon_end is None else float(self.horizon_end))
        self.n_paths_ = len(self.network_.path_ids)
        return self

    def transform(self, X):
        check_is_fitted(self, "network_")
        R = check_rate_matrix(X, self.n_paths_)
        out = np.empty((R.shape[0], R.shape[1] * R.shape[2]))
        for i, rates in enumerate(R):
            h = PathFlowVector(self.network_.path_ids, self.t0, self.tf, rates)
            out[i] = cell_average_psi(self.network_, h, self.penalty_, self.horizon_end_).ravel()
        return out


class DynamicUserEquilibrium(BaseEstimator):
    """Route and departure time equilibrium on a dyadic grid of ``2**grid_level`` cells.

    ``fit(network)`` solves the discrete equilibrium problem. With
    ``warm_start=True`` a previous solution on a coarser grid is refined and
    used as the starting point; one level up, the refined solution is
    continued to the finer grid (see :func:`solve_refined`).
    """

    def __init__(self, penalty=None, t0=0.0, tf=1.0, grid_level=5, alpha0=None, tol=1e-3,
                 max_iter=2000, method="newton", horizon_end=None, warm_start=False):
        self.penalty = penalty
        self.t0 = t0
        self.tf = tf
        self.grid_level = grid_level
        self.alpha0 = alpha0
        self.tol = tol
        self.max_iter = max_iter
        self.method = method
        self.horizon_end = horizon_end
        self.warm_start = warm_start

    def fit(self, X, y=None):
        net = check_network(X)
        penalty = check_penalty(self.penalty, target_arrival=self.tf)
        spec = FeasibleSetSpec.from_network(net, self.t0, self.tf, self.grid_level)
        h0 = None
        if self.warm_start and hasattr(self, "flows_"):
            h0 = self.flows_
            if h0.path_ids != net.path_ids or (h0.t0, h0.tf) != (spec.t0, spec.tf) or h0.level > spec.level:
                raise ValueError("warm start needs a previous fit on the same network and a coarser grid")
        if h0 is not None and h0.level == spec.level - 1:
            self.report_ = solve_refined(net, self.report_, penalty, tol=self.tol, max_iter=self.max_iter,
                                         horizon_end=self.horizon_end, alpha0=self.alpha0)
        else:
            while h0 is not None and h0.level < spec.level:
                h0 = refine(h0)
            self.report_ = solve_fixed_point(net, spec, penalty, alpha0=self.alpha0, tol=self.tol,
                                             max_iter=self.max_iter, horizon_end=self.horizon_end,
                                             h0=h0, method=self.method)
        self.flows_ = self.report_.flows
        self.od_costs_ = dict(zip(self.report_.od_ids, self.report_.od_costs))
        self.gap_history_ = np.array(self.report_.gap_history, dtype=float).reshape(-1, 3)
        self.n_iter_ = self.report_.iterations
        self.converged_ = self.report_.converged
        return self

    def predict(self, X):
        """Equilibrium departure rate of every path at the given times, shape ``(len(X), n_paths)``."""
        check_is_fitted(self, "flows_")
        t = np.asarray(X, dtype=float).ravel()
        h = self.flows_
        k = np.clip(np.floor((t - h.t0) / h.width).astype(int), 0, h.n_cells - 1)
        out = h.rates[:, k].T.copy()
        out[(t < h.t0) | (t >= h.tf)] = 0.0
        return out
