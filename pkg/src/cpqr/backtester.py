"""Expanding-window out-of-sample experiment runner and synthetic DGPs.

At each forecast origin only design rows whose targets are already
realised are used for fitting; the h-step structure of the design means
training stops h rows before the origin.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .dataprep import ConditioningGrid, DesignSet, ObservationFrame, default_grid
from .errors import CpqrError, DataError, EstimationError, InsufficientDataError
from .estimators import (
    DEFAULT_TAUS,
    ForecastDensity,
    fit_cpqr,
    fit_cqr,
    fit_qar,
    predict_quantiles,
)
from .evaluation import (
    WEIGHT_SCHEMES,
    ScoreSeries,
    dm_stars,
    dm_test,
    pit_series,
    pit_value,
    quantile_scores,
    qwcrps,
)
from .kernel import FRACTION_GRID, BandwidthSpec, cv_losses, select_bandwidth

ESTIMATOR_NAMES = ("cpqr", "cqr", "qar1", "qar2", "ncqar1", "ncqar2")


@dataclass(frozen=True)
class BacktestConfig:
    horizon: int = 1
    initial_window: int = 100
    taus: tuple = DEFAULT_TAUS
    estimators: tuple = ("cpqr", "qar2")
    grid: ConditioningGrid | None = None
    bandwidth: object = "cv"  # fraction, BandwidthSpec, or "cv"
    recv_every: int = 8  # re-cross-validate cadence; 0 keeps it fixed
    fractions: tuple = FRACTION_GRID
    noncrossing: bool = True
    seed: int = 0
    jobs: int = 1
    paranoid: bool = False  # poison future rows at each origin and re-check

    def __post_init__(self):
        if self.horizon not in (1, 4):
            raise DataError("horizon must be 1 or 4")
        if self.initial_window < 60:
            raise DataError("initial window must be at least 60")
        for name in self.estimators:
            if name not in ESTIMATOR_NAMES:
                raise DataError(f"unknown estimator {name!r}")
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        object.__setattr__(self, "estimators", tuple(self.estimators))


@dataclass(frozen=True)
class SyntheticSpec:
    dgp: str  # location-shift | two-regime-slope | momentum-free | heteroskedastic
    t: int
    seed: int = 0
    parameters: dict = field(default_factory=dict)


@dataclass
class BacktestResult:
    config: BacktestConfig
    densities: dict  # estimator -> list[ForecastDensity | None]
    origins: tuple
    scores: dict  # estimator -> ScoreSeries (equal weighting)
    summary: dict
    pits: dict  # estimator -> np.ndarray


def _fit_estimator(name, design, taus, grid, spec, noncrossing, jobs):
    if name == "cpqr":
        return fit_cpqr(design, taus, grid, spec, noncrossing=noncrossing, jobs=jobs)
    if name == "cqr":
        return fit_cqr(design, taus, grid, spec, jobs=jobs)
    if name == "qar1":
        return fit_qar(design, taus, lags=1, noncrossing=False)
    if name == "qar2":
        return fit_qar(design, taus, lags=2, noncrossing=False)
    if name == "ncqar1":
        return fit_qar(design, taus, lags=1, noncrossing=True)
    if name == "ncqar2":
        return fit_qar(design, taus, lags=2, noncrossing=True)
    raise DataError(f"unknown estimator {name!r}")


def _poisoned(design: DesignSet, origin: int) -> DesignSet:
    """Copy of the design with future-dated information destroyed."""
    h = design.horizon
    target = design.target.copy()
    cov = design.covariates.copy()
    mom = design.momentum.copy()
    target[max(origin - h + 1, 0) :] = 1e6
    cov[origin + 1 :, 1:] = 1e6
    mom[origin + 1 :] = 1e6
    return replace(design, target=target, covariates=cov, momentum=mom)


def run_backtest(design: DesignSet, config: BacktestConfig, out_dir=None) -> BacktestResult:
    """Expanding-window backtest over every configured estimator.

    Forecast origins are design rows i with at least ``initial_window``
    realised training rows, i.e. i from initial_window + h - 1 to n - 1.
    Quantiles are rearranged before scoring for every estimator.
    """
    n = len(design)
    h = design.horizon
    if h != config.horizon:
        raise DataError("design and config horizons differ")
    first = config.initial_window + h - 1
    if first >= n:
        raise InsufficientDataError(
            f"design of length {n} too short for initial window {config.initial_window}"
        )
    grid = config.grid if config.grid is not None else default_grid()
    taus = config.taus

    origins = list(range(first, n))
    densities = {name: [] for name in config.estimators}
    spec = _initial_bandwidth(config)

    for step, i in enumerate(origins):
        train = design.head(i - h + 1)
        spec = _maybe_recv(config, spec, step, train, taus, grid)
        for name in config.estimators:
            density = _forecast_one(
                name, train, design, i, taus, grid, spec, config
            )
            if density is not None and config.paranoid:
                poisoned = _forecast_one(
                    name, _poisoned(design, i).head(i - h + 1), _poisoned(design, i),
                    i, taus, grid, spec, config,
                )
                if poisoned is None or not np.array_equal(
                    density.raw_quantiles, poisoned.raw_quantiles
                ):
                    raise CpqrError(
                        f"lookahead detected for {name} at origin index {i}"
                    )
            densities[name].append(density)

    origin_labels = tuple(str(design.origin_dates[i]) for i in origins)
    scores, pits, summary = _score_run(config, densities, origin_labels, h)
    result = BacktestResult(
        config=config,
        densities=densities,
        origins=origin_labels,
        scores=scores,
        summary=summary,
        pits=pits,
    )
    if out_dir is not None:
        write_run(result, out_dir)
    return result


def _initial_bandwidth(config):
    bw = config.bandwidth
    if isinstance(bw, BandwidthSpec):
        return bw
    if isinstance(bw, (int, float)):
        return BandwidthSpec(float(bw))
    return None  # cross-validated lazily at the first origin


def _needs_bandwidth(config):
    return any(name in ("cpqr", "cqr") for name in config.estimators)


def _maybe_recv(config, spec, step, train, taus, grid):
    if not _needs_bandwidth(config):
        return spec
    cv_mode = config.bandwidth == "cv"
    if not cv_mode:
        return spec
    due = spec is None or (config.recv_every > 0 and step % config.recv_every == 0)
    if not due:
        return spec
    table = cv_losses(train, taus, grid, config.fractions, config.noncrossing)
    return select_bandwidth(table)


def _forecast_one(name, train, design, i, taus, grid, spec, config):
    try:
        cube = _fit_estimator(
            name, train, taus, grid, spec, config.noncrossing, config.jobs
        )
        x = design.covariates[i]
        if "momentum" in cube.names:
            x = np.r_[x, design.momentum[i]]
        return predict_quantiles(
            cube,
            x,
            design.momentum[i],
            origin=str(design.origin_dates[i]),
            realization=float(design.target[i]),
        )
    except CpqrError:
        return None


def _score_run(config, densities, origin_labels, h):
    scores = {}
    pits = {}
    summary = {
        "horizon": h,
        "initial_window": config.initial_window,
        "seed": config.seed,
        "taus": list(config.taus),
        "estimators": {},
    }
    reference = "qar2" if "qar2" in config.estimators else config.estimators[0]
    summary["reference"] = reference

    qs_tables = {}
    for name, series in densities.items():
        present = [d is not None for d in series]
        missing = len(series) - sum(present)
        qs = np.full((len(series), len(config.taus)), np.nan)
        pit_vals = []
        for j, d in enumerate(series):
            if d is None:
                continue
            qs[j] = quantile_scores(d)
            pit_vals.append(pit_value(d))
        qs_tables[name] = qs
        valid = missing <= 0.1 * len(series)
        if not valid:
            warnings.warn(f"estimator {name} missing {missing} origins; run flagged invalid")
        keep = ~np.isnan(qs).any(axis=1)
        scores[name] = ScoreSeries(
            origins=tuple(o for o, k in zip(origin_labels, keep) if k),
            taus=config.taus,
            scores=qs[keep],
            weighting="equal",
        )
        pits[name] = np.array(pit_vals)
        entry = {"missing": missing, "valid": bool(valid), "qwcrps": {}, "dm_vs_ref": {}}
        for scheme in WEIGHT_SCHEMES:
            _, mean = qwcrps(replace_scheme(scores[name], scheme))
            entry["qwcrps"][scheme] = mean
        summary["estimators"][name] = entry

    for name in densities:
        if name == reference:
            continue
        for scheme in WEIGHT_SCHEMES:
            a, b = _aligned_losses(qs_tables[name], qs_tables[reference], config.taus, scheme)
            if len(a) < 10:
                continue
            stat, p = dm_test(a, b, h=h)
            summary["estimators"][name]["dm_vs_ref"][scheme] = {
                "statistic": stat,
                "p_value": p,
                "stars": dm_stars(p),
            }
    return scores, pits, summary


def replace_scheme(series: ScoreSeries, scheme: str) -> ScoreSeries:
    return ScoreSeries(
        origins=series.origins, taus=series.taus, scores=series.scores, weighting=scheme
    )


def _aligned_losses(qs_a, qs_b, taus, scheme):
    """qwCRPS losses on the intersection of non-missing origins."""
    from .evaluation import scheme_weights

    keep = ~np.isnan(qs_a).any(axis=1) & ~np.isnan(qs_b).any(axis=1)
    w = scheme_weights(taus, scheme)
    return qs_a[keep] @ w, qs_b[keep] @ w


# ---------------------------------------------------------------------------
# synthetic data

def generate_synthetic(spec: SyntheticSpec) -> ObservationFrame:
    """Closed-form DGPs with a quarterly index, reproducible from the seed.

    two-regime-slope: y_{t+1} = b(z_t) y_t + e_t with slope 0.3 when the
    momentum z_t = y_t - y_{t-1} is negative and 0.9 otherwise.
    location-shift: homoskedastic AR(1), quantiles are parallel shifts.
    momentum-free: AR(1) plus an independent covariate effect.
    heteroskedastic: noise scale increasing in the current level, which
    induces quantile variation in the slope but no momentum effect.
    """
    t = spec.t
    if t < 10:
        raise InsufficientDataError("synthetic sample too small")
    rng = np.random.default_rng(spec.seed)
    p = dict(spec.parameters)
    burn = 50
    total = t + burn

    gdp = rng.standard_normal(total)
    imp = rng.standard_normal(total)
    nfci = rng.standard_normal(total)
    eps = rng.standard_normal(total)
    y = np.zeros(total)

    if spec.dgp == "location-shift":
        a, b, s = p.get("alpha", 0.5), p.get("beta", 0.5), p.get("sigma", 1.0)
        for i in range(1, total):
            y[i] = a + b * y[i - 1] + s * eps[i]
    elif spec.dgp == "momentum-free":
        b, g, s = p.get("beta", 0.3), p.get("gdp_effect", 0.5), p.get("sigma", 1.0)
        for i in range(1, total):
            y[i] = b * y[i - 1] + g * gdp[i - 1] + s * eps[i]
    elif spec.dgp == "two-regime-slope":
        b_lo, b_hi = p.get("beta_low", 0.3), p.get("beta_high", 0.9)
        s = p.get("sigma", 0.5)
        for i in range(2, total):
            z = y[i - 1] - y[i - 2]
            b = b_lo if z < 0 else b_hi
            y[i] = b * y[i - 1] + s * eps[i]
    elif spec.dgp == "heteroskedastic":
        b = p.get("beta", 0.2)
        for i in range(1, total):
            scale = 0.6 + 0.4 * np.tanh(y[i - 1])
            y[i] = b * y[i - 1] + scale * eps[i]
    else:
        raise DataError(f"unknown dgp {spec.dgp!r}")

    dates = pd.period_range("1900Q1", periods=t, freq="Q")
    frame = pd.DataFrame(
        {
            "inflation": y[burn:],
            "gdp": gdp[burn:],
            "import": imp[burn:],
            "nfci": nfci[burn:],
        }
    )
    return ObservationFrame(dates=dates, columns=frame)


# ---------------------------------------------------------------------------
# run directory serialization

def write_run(result: BacktestResult, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "densities.csv", "w", encoding="utf-8") as fh:
        fh.write("estimator,origin,tau,raw,rearranged,realization\n")
        for name, series in result.densities.items():
            for origin, d in zip(result.origins, series):
                if d is None:
                    continue
                for q, tau in enumerate(d.taus):
                    fh.write(
                        f"{name},{origin},{float(tau)!r},{float(d.raw_quantiles[q])!r},"
                        f"{float(d.rearranged_quantiles[q])!r},{float(d.realization)!r}\n"
                    )

    with open(out_dir / "scores.csv", "w", encoding="utf-8") as fh:
        fh.write("estimator,origin,tau,qs\n")
        for name, series in result.scores.items():
            for i, origin in enumerate(series.origins):
                for q, tau in enumerate(series.taus):
                    fh.write(f"{name},{origin},{float(tau)!r},{float(series.scores[i, q])!r}\n")

    with open(out_dir / "pits.csv", "w", encoding="utf-8") as fh:
        fh.write("estimator,origin,pit\n")
        for name, series in result.densities.items():
            vals = result.pits[name]
            j = 0
            for origin, d in zip(result.origins, series):
                if d is None:
                    continue
                fh.write(f"{name},{origin},{float(vals[j])!r}\n")
                j += 1

    (out_dir / "summary.json").write_text(
        json.dumps(result.summary, indent=2, sort_keys=True), encoding="utf-8"
    )
    manifest = {
        "config": {
            "horizon": result.config.horizon,
            "initial_window": result.config.initial_window,
            "taus": list(result.config.taus),
            "estimators": list(result.config.estimators),
            "bandwidth": str(result.config.bandwidth),
            "recv_every": result.config.recv_every,
            "noncrossing": result.config.noncrossing,
            "seed": result.config.seed,
        },
        "origins": list(result.origins),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    return out_dir


def read_run(run_dir):
    """Load a run directory back into plain tables."""
    run_dir = Path(run_dir)
    out = {}
    for stem in ("densities", "scores", "pits"):
        path = run_dir / f"{stem}.csv"
        if not path.exists():
            raise DataError(f"missing run artifact: {path.name}")
        out[stem] = pd.read_csv(path)
    for stem in ("summary", "manifest"):
        path = run_dir / f"{stem}.json"
        if not path.exists():
            raise DataError(f"missing run artifact: {path.name}")
        out[stem] = json.loads(path.read_text(encoding="utf-8"))
    return out
