"""Tri-cube nearest-neighbour kernel weights and bandwidth cross-validation.

The bandwidth is expressed as a quantile fraction of the sample: the
window covers the m = ceil(fraction * T) observations closest in momentum
to the target value.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, SelectionError
from .solver import check_loss

FRACTION_GRID = tuple(round(0.10 + 0.05 * i, 2) for i in range(17))  # 0.10 .. 0.90


@dataclass(frozen=True)
class BandwidthSpec:
    """Nearest-neighbour window as a fraction of the sample size."""

    quantile_fraction: float

    def __post_init__(self):
        f = float(self.quantile_fraction)
        if not any(abs(f - g) < 1e-9 for g in FRACTION_GRID):
            raise SelectionError(
                f"fraction {f} not on the grid {{0.10, 0.15, ..., 0.90}}"
            )
        object.__setattr__(self, "quantile_fraction", f)

    def window_count(self, t: int) -> int:
        return min(t, math.ceil(self.quantile_fraction * t - 1e-9))


def tricube_weights(
    z_values: np.ndarray,
    target_z: float,
    spec: BandwidthSpec,
    min_positive: int = 0,
) -> np.ndarray:
    """Tri-cube weights on |z_t - target_z| within the nearest-neighbour window.

    The window radius d is the m-th smallest distance; observations at the
    boundary get zero weight. Degenerate windows (d = 0) fall back to
    uniform weights over the tied set; if fewer than ``min_positive``
    weights are strictly positive the window is widened.
    """
    z = np.asarray(z_values, dtype=float)
    t = len(z)
    m = spec.window_count(t)
    if t < m:
        raise InsufficientDataError(f"sample of {t} smaller than window {m}")
    d = np.abs(z - target_z)
    order = np.sort(d)

    while True:
        d_tau = order[m - 1]
        if d_tau == 0.0:
            tied = d == 0.0
            warnings.warn(
                f"window radius is zero at z={target_z}; "
                "using uniform weights over the tied observations",
                stacklevel=2,
            )
            return np.where(tied, 1.0 / tied.sum(), 0.0)
        w = np.where(d <= d_tau, (1.0 - (d / d_tau) ** 3) ** 3 / d_tau, 0.0)
        if int((w > 0).sum()) >= min_positive or m >= t:
            if int((w > 0).sum()) < min_positive:
                warnings.warn(
                    f"only {(w > 0).sum()} positive weights at z={target_z} "
                    f"even at the full-sample window",
                    stacklevel=2,
                )
            return w
        warnings.warn(
            f"widening window at z={target_z} to reach {min_positive} positive weights",
            stacklevel=2,
        )
        m += 1


def cv_losses(
    design,
    taus,
    grid,
    fractions=FRACTION_GRID,
    noncrossing: bool = True,
) -> dict:
    """Expanding-window one-step forecast loss per candidate fraction.

    Walks the final 10% of origins; for each, fits the conditionally
    parametric model on all earlier rows (only at the grid point nearest
    to the origin's momentum, which is the one used for prediction) and
    accumulates the summed check loss across taus at the realised target.
    """
    from .estimators import _fit_cpqr_gridpoint, predict_from_values

    n = len(design)
    n_hold = max(int(n // 10), 1)
    if n_hold < 5:
        raise InsufficientDataError(
            f"final-10% holdout has {n_hold} origins, need at least 5"
        )
    hold = range(n - n_hold, n)
    taus = tuple(float(t) for t in np.atleast_1d(taus))

    table = {}
    for frac in fractions:
        spec = BandwidthSpec(frac)
        losses = []
        failed = False
        for i in hold:
            train = design.head(i)
            g = grid.nearest(design.momentum[i])
            try:
                betas = _fit_cpqr_gridpoint(train, taus, grid, g, spec, noncrossing)
            except Exception:
                failed = True
                break
            preds = predict_from_values(betas, design.covariates[i])
            loss = sum(
                float(check_loss(design.target[i] - preds[q], tau))
                for q, tau in enumerate(taus)
            )
            losses.append(loss)
        table[float(frac)] = math.inf if failed else float(np.mean(losses))
    return table


def select_bandwidth(loss_table: dict) -> BandwidthSpec:
    """Argmin of the mean loss; ties break toward the larger fraction."""
    if not loss_table:
        raise SelectionError("empty loss table")
    finite = {f: v for f, v in loss_table.items() if math.isfinite(v)}
    if not finite:
        raise SelectionError("all candidate losses are infinite")
    best = min(finite.values())
    chosen = max(f for f, v in finite.items() if v == best)
    return BandwidthSpec(chosen)
