"""Independent oracles used by the test suite.

These deliberately avoid the library's LP path: the quantile regression
oracle enumerates exhaustive basic solutions (every K-subset of
observations interpolated exactly) and evaluates the weighted check loss
directly.
"""

from itertools import combinations

import numpy as np


def check_loss_direct(u, tau):
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0.0))


def brute_force_qr(y, X, w, tau):
    """Minimum weighted check loss over all exact-fit basic solutions.

    Valid whenever the design has full column rank: some optimal vertex of
    the QR linear program interpolates K observations exactly.
    """
    y = np.asarray(y, float)
    X = np.asarray(X, float)
    w = np.asarray(w, float)
    t, k = X.shape
    best_obj = np.inf
    best_beta = None
    for subset in combinations(range(t), k):
        Xs = X[list(subset)]
        if abs(np.linalg.det(Xs)) < 1e-12:
            continue
        beta = np.linalg.solve(Xs, y[list(subset)])
        obj = float(np.sum(w * check_loss_direct(y - X @ beta, tau)))
        if obj < best_obj - 1e-15:
            best_obj = obj
            best_beta = beta
    return best_beta, best_obj


def random_qr_instance(seed):
    """Small weighted QR instance for the oracle suite (T <= 12, K <= 3)."""
    rng = np.random.default_rng(seed)
    t = int(rng.integers(5, 13))
    k = int(rng.integers(1, 4))
    X = np.column_stack([np.ones(t)] + [rng.standard_normal(t) for _ in range(k - 1)])
    y = rng.standard_normal(t) * 2.0
    w = rng.uniform(0.2, 2.0, size=t)
    tau = float(rng.choice(np.round(np.arange(0.1, 0.91, 0.1), 2)))
    return y, X, w, tau


def weighted_quantile(values, weights, tau):
    """Smallest value whose cumulative weight share reaches tau."""
    order = np.argsort(values)
    v = np.asarray(values, float)[order]
    cw = np.cumsum(np.asarray(weights, float)[order])
    total = cw[-1]
    idx = int(np.searchsorted(cw, tau * total))
    return float(v[min(idx, len(v) - 1)])
