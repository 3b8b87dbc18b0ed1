"""The estimator family: QAR, NCQAR, CQR, and CPQR with local non-crossing.

Every fit produces a CoefficientCube indexed (quantile, grid point,
covariate); non-conditional estimators use a singleton grid.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .dataprep import ConditioningGrid, DesignSet
from .errors import EstimationError
from .kernel import BandwidthSpec, tricube_weights
from .solver import (
    NonCrossingConstraint,
    QrProblem,
    QrSolution,
    StackedQrProblem,
    solve_composite_qr,
    solve_stacked_qr,
    solve_weighted_qr,
)

DEFAULT_TAUS = tuple(round(0.05 * i, 2) for i in range(1, 20))  # 0.05 .. 0.95


@dataclass(frozen=True)
class CoefficientCube:
    """Coefficients over (quantile x grid point x covariate)."""

    taus: tuple
    grid: ConditioningGrid
    names: tuple
    values: np.ndarray
    bandwidth: BandwidthSpec | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        object.__setattr__(self, "names", tuple(self.names))
        expect = (len(self.taus), len(self.grid), len(self.names))
        if vals.shape != expect:
            raise EstimationError(f"cube shape {vals.shape} != {expect}")
        if not np.all(np.isfinite(vals)):
            raise EstimationError("cube contains non-finite values")


@dataclass(frozen=True)
class ForecastDensity:
    """Predicted quantiles at one origin, raw and rearranged."""

    origin: object
    taus: tuple
    raw_quantiles: np.ndarray
    rearranged_quantiles: np.ndarray
    realization: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "raw_quantiles", np.asarray(self.raw_quantiles, float))
        object.__setattr__(
            self, "rearranged_quantiles", np.asarray(self.rearranged_quantiles, float)
        )


@dataclass(frozen=True)
class WorstCaseTemplate:
    """Geometry of the local worst-case non-crossing constraint.

    In min-max scaled covariate space the requirement is
    d0_scaled + sum_k min(0, dk_scaled) >= 0 for every adjacent quantile
    pair, which guarantees non-crossing over the whole local bounding box.
    Expressed in original coefficients: base = intercept row folding in the
    column minima, one concave term per covariate scaled by its range.
    """

    base: np.ndarray
    concave: tuple
    dropped: tuple

    def constraints(self, q_count: int) -> tuple:
        return tuple(
            NonCrossingConstraint(pair=(q - 1, q), base=self.base, concave=self.concave)
            for q in range(1, q_count)
        )


def worst_case_rows(local_covariates: np.ndarray) -> WorstCaseTemplate:
    """Build the worst-case non-crossing constraint from local rows.

    Non-intercept columns are min-max scaled over the supplied rows;
    columns constant over the rows are dropped from the constraint with a
    warning since their scaling is undefined.
    """
    X = np.asarray(local_covariates, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EstimationError("worst-case rows need a nonempty covariate matrix")
    if not np.allclose(X[:, 0], 1.0):
        raise EstimationError("intercept must be in column 1")
    k = X.shape[1]
    base = np.zeros(k)
    base[0] = 1.0
    concave = []
    dropped = []
    for j in range(1, k):
        mn, mx = float(X[:, j].min()), float(X[:, j].max())
        rng = mx - mn
        if rng == 0.0:
            dropped.append(j)
            warnings.warn(
                f"covariate column {j} constant over local rows; "
                "dropped from the non-crossing constraint",
                stacklevel=2,
            )
            continue
        base[j] = mn
        row = np.zeros(k)
        row[j] = rng
        concave.append(row)
    return WorstCaseTemplate(base=base, concave=tuple(concave), dropped=tuple(dropped))


def _stack_or_split(design_y, X, w, taus, constraints) -> np.ndarray:
    if constraints:
        sol = solve_stacked_qr(
            StackedQrProblem(design_y, X, w, taus, constraints)
        )
        return np.atleast_2d(sol.coefficients)
    betas = np.empty((len(taus), X.shape[1]))
    for q, tau in enumerate(taus):
        betas[q] = solve_weighted_qr(QrProblem(design_y, X, w, tau)).coefficients
    return betas


def fit_qar(design: DesignSet, taus=DEFAULT_TAUS, lags: int = 1, noncrossing: bool = False) -> CoefficientCube:
    """Quantile autoregression on the design covariates.

    ``lags=2`` appends the momentum column as an extra covariate; with
    ``noncrossing`` the worst-case rows over the full sample are imposed.
    """
    if lags not in (1, 2):
        raise EstimationError("lags must be 1 or 2")
    taus = tuple(float(t) for t in np.atleast_1d(taus))
    X = design.covariates
    names = design.names
    if lags == 2:
        X = np.column_stack([X, design.momentum])
        names = names + ("momentum",)
    w = np.ones(len(design))
    constraints = ()
    if noncrossing and len(taus) > 1:
        constraints = worst_case_rows(X).constraints(len(taus))
    betas = _stack_or_split(design.target, X, w, taus, constraints)
    return CoefficientCube(
        taus=taus,
        grid=ConditioningGrid.singleton(0.0),
        names=names,
        values=betas[:, None, :],
    )


def _fit_cpqr_gridpoint(design, taus, grid, g, spec, noncrossing) -> np.ndarray:
    """Stacked (or decoupled) local fit at one grid point; returns (Q, K)."""
    k = design.k
    if spec is None:
        w = np.ones(len(design))
    else:
        w = tricube_weights(design.momentum, grid.points[g], spec, min_positive=k + 1)
    constraints = ()
    if noncrossing and len(taus) > 1:
        local = grid.member_mask(design.momentum, g)
        if local.any():
            constraints = worst_case_rows(design.covariates[local]).constraints(len(taus))
        else:
            warnings.warn(
                f"no observations inside the halfway bounds of grid point "
                f"{grid.points[g]}; constraints skipped",
                stacklevel=2,
            )
    try:
        return _stack_or_split(design.target, design.covariates, w, taus, constraints)
    except Exception as exc:
        raise EstimationError(f"fit failed at grid point z={grid.points[g]}: {exc}") from exc


def fit_cpqr(
    design: DesignSet,
    taus=DEFAULT_TAUS,
    grid: ConditioningGrid | None = None,
    spec: BandwidthSpec | None = None,
    noncrossing: bool = True,
    jobs: int = 1,
) -> CoefficientCube:
    """Conditionally parametric QR: one locally weighted fit per grid point.

    ``spec=None`` uses uniform weights at every grid point (useful for
    structural checks against the non-conditional estimators). With
    ``noncrossing`` the worst-case rows are rebuilt from the rows inside
    each grid point's halfway bounds only.
    """
    grid = grid if grid is not None else ConditioningGrid.singleton(0.0)
    taus = tuple(float(t) for t in np.atleast_1d(taus))

    def one(g):
        return _fit_cpqr_gridpoint(design, taus, grid, g, spec, noncrossing)

    slabs = _map_ordered(one, range(len(grid)), jobs)
    values = np.stack(slabs, axis=1)
    return CoefficientCube(
        taus=taus, grid=grid, names=design.names, values=values, bandwidth=spec
    )


def fit_cqr(
    design: DesignSet,
    taus=DEFAULT_TAUS,
    grid: ConditioningGrid | None = None,
    spec: BandwidthSpec | None = None,
    jobs: int = 1,
) -> CoefficientCube:
    """Composite conditionally parametric fit: per grid point, slopes are
    shared across quantiles and intercepts are monotone in tau."""
    grid = grid if grid is not None else ConditioningGrid.singleton(0.0)
    taus = tuple(float(t) for t in np.atleast_1d(taus))
    k = design.k

    def one(g):
        if spec is None:
            w = np.ones(len(design))
        else:
            w = tricube_weights(design.momentum, grid.points[g], spec, min_positive=k + 1)
        try:
            sol = solve_composite_qr(design.target, design.covariates, w, taus)
        except Exception as exc:
            raise EstimationError(
                f"composite fit failed at grid point z={grid.points[g]}: {exc}"
            ) from exc
        return np.atleast_2d(sol.coefficients)

    slabs = _map_ordered(one, range(len(grid)), jobs)
    values = np.stack(slabs, axis=1)
    return CoefficientCube(
        taus=taus, grid=grid, names=design.names, values=values, bandwidth=spec
    )


def _map_ordered(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def predict_from_values(betas: np.ndarray, covariates: np.ndarray) -> np.ndarray:
    return np.atleast_2d(betas) @ np.asarray(covariates, dtype=float)


def predict_quantiles(
    cube: CoefficientCube,
    covariates: np.ndarray,
    momentum: float,
    origin=None,
    realization: float = float("nan"),
) -> ForecastDensity:
    """Quantile forecasts from the grid point nearest to the momentum value.

    Raw quantiles are the local linear predictions; the rearranged set is
    their ascending sort (rearrangement restores monotonicity).
    """
    x = np.asarray(covariates, dtype=float)
    if x.shape != (len(cube.names),):
        raise EstimationError(
            f"covariate row has length {x.shape}, cube expects {len(cube.names)}"
        )
    g = cube.grid.nearest(momentum)
    raw = cube.values[:, g, :] @ x
    return ForecastDensity(
        origin=origin,
        taus=cube.taus,
        raw_quantiles=raw,
        rearranged_quantiles=np.sort(raw),
        realization=realization,
    )


def fitted_quantiles(cube: CoefficientCube, design: DesignSet) -> np.ndarray:
    """In-sample raw fitted quantiles, shape (n, Q)."""
    out = np.empty((len(design), len(cube.taus)))
    for i in range(len(design)):
        g = cube.grid.nearest(design.momentum[i])
        out[i] = cube.values[:, g, :] @ design.covariates[i]
    return out


# ---------------------------------------------------------------------------
# serialization: long-format CSV + JSON sidecar, 17 significant digits

def write_cube(cube: CoefficientCube, out_dir, stem: str = "cube"):
    """Write <stem>.csv (tau, z, covariate, value) and <stem>.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for q, tau in enumerate(cube.taus):
        for g, z in enumerate(cube.grid.points):
            for k, name in enumerate(cube.names):
                rows.append((repr(tau), repr(float(z)), name, format(cube.values[q, g, k], ".17g")))
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("tau,z,covariate,value\n")
        for r in rows:
            fh.write(",".join(r) + "\n")
    sidecar = {
        "taus": list(cube.taus),
        "grid": [float(z) for z in cube.grid.points],
        "names": list(cube.names),
        "bandwidth": None
        if cube.bandwidth is None
        else cube.bandwidth.quantile_fraction,
    }
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    return csv_path, json_path


def read_cube(out_dir, stem: str = "cube") -> CoefficientCube:
    out_dir = Path(out_dir)
    sidecar = json.loads((out_dir / f"{stem}.json").read_text(encoding="utf-8"))
    taus = tuple(sidecar["taus"])
    grid = ConditioningGrid(points=np.array(sidecar["grid"]))
    names = tuple(sidecar["names"])
    table = pd.read_csv(
        out_dir / f"{stem}.csv", dtype={"value": float}, float_precision="round_trip"
    )
    values = np.empty((len(taus), len(grid), len(names)))
    q_of = {t: i for i, t in enumerate(taus)}
    g_of = {float(z): i for i, z in enumerate(grid.points)}
    k_of = {n: i for i, n in enumerate(names)}
    for row in table.itertuples(index=False):
        values[q_of[float(row.tau)], g_of[float(row.z)], k_of[row.covariate]] = row.value
    bw = sidecar.get("bandwidth")
    return CoefficientCube(
        taus=taus,
        grid=grid,
        names=names,
        values=values,
        bandwidth=None if bw is None else BandwidthSpec(bw),
    )
