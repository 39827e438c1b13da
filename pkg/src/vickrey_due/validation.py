"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .network import Network, build_network
from .penalty import Penalty, make_penalty


def check_network(net) -> Network:
    if isinstance(net, Network):
        return net
    if isinstance(net, dict):
        return build_network(net)
    raise TypeError(f"expected a Network or a raw network dict, got {type(net).__name__}")


def check_penalty(penalty, target_arrival=None) -> Penalty:
    if isinstance(penalty, Penalty):
        return penalty
    if penalty is None:
        if target_arrival is None:
            raise ValueError("no penalty given")
        return make_penalty({"kind": "none", "target_arrival": target_arrival})
    return make_penalty(penalty)


def check_rate_matrix(X, n_paths):
    """Rows are flattened ``(n_paths, n_cells)`` rate arrays; returns shape ``(rows, n_paths, n_cells)``."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] % n_paths:
        raise ValueError(f"{X.shape[1]} columns do not split over {n_paths} paths")
    n_cells = X.shape[1] // n_paths
    if n_cells & (n_cells - 1):
        raise ValueError(f"cells per path must be a power of two, got {n_cells}")
    if np.any(X < 0):
        raise ValueError("departure rates must be nonnegative")
    return X.reshape(X.shape[0], n_paths, n_cells)
