"""Density-fit evaluation: pseudo R2, quantile scores, qwCRPS, the
Diebold-Mariano comparison, and PIT calibration with Monte Carlo bands."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EvaluationError
from .estimators import ForecastDensity
from .solver import QrProblem, check_loss, solve_weighted_qr

WEIGHT_SCHEMES = ("equal", "center", "left", "right")


def scheme_weights(taus, scheme: str) -> np.ndarray:
    """Per-quantile weights for the discretized qwCRPS integral.

    The equal scheme averages the quantile scores (weight 1/Q); the other
    schemes apply their raw profile on the tau grid.
    """
    taus = np.asarray(taus, dtype=float)
    if scheme == "equal":
        return np.full(len(taus), 1.0 / len(taus))
    if scheme == "center":
        return taus * (1.0 - taus)
    if scheme == "left":
        return (1.0 - taus) ** 2
    if scheme == "right":
        return taus**2
    raise EvaluationError(f"unknown weighting scheme {scheme!r}")


@dataclass(frozen=True)
class ScoreSeries:
    """Per-origin quantile scores with an attached weighting scheme."""

    origins: tuple
    taus: tuple
    scores: np.ndarray  # (n, Q)
    weighting: str = "equal"

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        object.__setattr__(self, "scores", scores)
        if scores.shape != (len(self.origins), len(self.taus)):
            raise EvaluationError("score table shape mismatch")
        if np.any(scores < -1e-12):
            raise EvaluationError("quantile scores must be nonnegative")
        if self.weighting not in WEIGHT_SCHEMES:
            raise EvaluationError(f"unknown weighting scheme {self.weighting!r}")


@dataclass(frozen=True)
class PitSeries:
    values: np.ndarray
    evaluation_grid: np.ndarray
    empirical_cdf: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray


def pseudo_r2(realizations, fitted_quantile, tau: float) -> float:
    """1 - RASW/TASW from the backtest regression of realizations on the
    fitted quantile (intercept plus one slope) at the same tau.

    A constant fitted quantile adds no information and returns exactly 0.
    """
    y = np.asarray(realizations, dtype=float)
    v = np.asarray(fitted_quantile, dtype=float)
    if len(y) != len(v) or len(y) < 3:
        raise EvaluationError("need aligned series of length >= 3")
    w = np.ones(len(y))

    intercept_only = solve_weighted_qr(QrProblem(y, np.ones((len(y), 1)), w, tau))
    tasw = intercept_only.objective
    if tasw <= 0.0:
        raise EvaluationError("total absolute sum of weighted residuals is zero")
    if np.ptp(v) == 0.0:
        warnings.warn("fitted quantile is constant; pseudo R2 is 0 by convention")
        return 0.0
    full = solve_weighted_qr(QrProblem(y, np.column_stack([np.ones(len(y)), v]), w, tau))
    return 1.0 - full.objective / tasw


def quantile_scores(density: ForecastDensity) -> np.ndarray:
    """QS_q = rho_tau_q(y - q_hat_tau_q) on the rearranged quantiles."""
    if not np.isfinite(density.realization):
        raise EvaluationError("density has no realization attached")
    taus = np.asarray(density.taus, dtype=float)
    resid = density.realization - density.rearranged_quantiles
    return np.array([float(check_loss(resid[q], taus[q])) for q in range(len(taus))])


def qwcrps(series: ScoreSeries):
    """Weighted sum of quantile scores per origin plus the origin mean."""
    w = scheme_weights(series.taus, series.weighting)
    per_origin = series.scores @ w
    return per_origin, float(per_origin.mean())


def dm_test(loss_a, loss_b, h: int = 1):
    """Diebold-Mariano statistic with Newey-West long-run variance at lag
    h-1 (Bartlett weights) and a two-sided normal p-value."""
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise EvaluationError("loss series must be aligned 1-d arrays")
    n = len(a)
    if n < 10:
        raise EvaluationError("need at least 10 aligned losses")
    d = a - b
    dbar = d.mean()
    dc = d - dbar
    gamma0 = float(dc @ dc) / n
    lrv = gamma0
    max_lag = max(h - 1, 0)
    for j in range(1, max_lag + 1):
        gamma_j = float(dc[j:] @ dc[:-j]) / n
        lrv += 2.0 * (1.0 - j / (max_lag + 1.0)) * gamma_j
    if lrv <= 0.0:
        lrv = gamma0
    if lrv == 0.0:
        if dbar == 0.0:
            return 0.0, 1.0
        raise EvaluationError("zero loss-differential variance with nonzero mean")
    statistic = dbar / np.sqrt(lrv / n)
    p = 2.0 * float(stats.norm.sf(abs(statistic)))
    return float(statistic), p


def dm_stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


def pit_value(density: ForecastDensity) -> float:
    """Forecast CDF at the realization, by linear interpolation of tau
    against the rearranged quantiles.

    Realizations outside the quantile range clamp to the boundary tau;
    ties (flat segments) map to the midpoint of their tau range.
    """
    if not np.isfinite(density.realization):
        raise EvaluationError("density has no realization attached")
    y = density.realization
    q = density.rearranged_quantiles
    taus = np.asarray(density.taus, dtype=float)
    if y < q[0]:
        return float(taus[0])
    if y > q[-1]:
        return float(taus[-1])
    exact = np.flatnonzero(q == y)
    if len(exact):
        return float((taus[exact[0]] + taus[exact[-1]]) / 2.0)
    i = int(np.searchsorted(q, y)) - 1
    frac = (y - q[i]) / (q[i + 1] - q[i])
    return float(taus[i] + frac * (taus[i + 1] - taus[i]))


def pit_bands(
    n: int,
    level: float = 0.05,
    draws: int = 2000,
    seed: int = 0,
    grid_size: int = 101,
):
    """Monte Carlo sup-deviation envelope around the 45-degree line.

    Simulates iid uniform samples of size n, records the Kolmogorov
    sup-deviation of each empirical CDF, and takes its (1-level) quantile
    as the band radius. The bands are guidance only.
    """
    if n < 10:
        raise EvaluationError("need at least 10 PIT values for bands")
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, n + 1)
    sups = np.empty(draws)
    for i in range(draws):
        u = np.sort(rng.random(n))
        sups[i] = max(np.max(ranks / n - u), np.max(u - (ranks - 1) / n))
    radius = float(np.quantile(sups, 1.0 - level))
    r = np.linspace(0.0, 1.0, grid_size)
    return r, np.clip(r - radius, 0.0, 1.0), np.clip(r + radius, 0.0, 1.0), radius


def pit_series(
    values,
    level: float = 0.05,
    draws: int = 2000,
    seed: int = 0,
    grid_size: int = 101,
) -> PitSeries:
    """Empirical PIT CDF over an r-grid with Monte Carlo bands."""
    values = np.asarray(values, dtype=float)
    if np.any((values < 0) | (values > 1)):
        raise EvaluationError("PIT values must lie in [0, 1]")
    r, lo, hi, _ = pit_bands(len(values), level, draws, seed, grid_size)
    ecdf = np.array([np.mean(values <= x) for x in r])
    return PitSeries(
        values=values, evaluation_grid=r, empirical_cdf=ecdf, band_lo=lo, band_hi=hi
    )
