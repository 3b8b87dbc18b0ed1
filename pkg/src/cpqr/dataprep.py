"""Data ingestion and design construction for the Inflation-at-Risk model.

Builds the quarterly observation table, the momentum conditioning variable,
and the horizon-specific regression design with covariates
[intercept, inflation, gdp, import, nfci].
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
import requests

from .errors import (
    DataError,
    FrequencyError,
    InsufficientDataError,
    ParseError,
    SchemaError,
)

CANONICAL_COLUMNS = ("inflation", "gdp", "import", "nfci")
COVARIATE_NAMES = ("intercept", "inflation", "gdp", "import", "nfci")

FRED_CODES = {
    "inflation": "CPIAUCSL_PC1",
    "gdp": "A191RL1Q225SBEA",
    "import": "B021RG3Q086SBEA_PC1",
    "nfci": "NFCI",
}

_FRED_CSV_URL = "https://fred.stlouisfed.org/graph/fredgraph.csv?id={code}"
CACHE_DIR_ENV = "CPQR_CACHE_DIR"


@dataclass(frozen=True)
class ObservationFrame:
    """Aligned quarterly series with a gap-free period index.

    Missing cells are permitted only at the start or end of a column;
    interior gaps are rejected at construction.
    """

    dates: pd.PeriodIndex
    columns: pd.DataFrame

    def __post_init__(self):
        if len(self.dates) != len(self.columns):
            raise DataError("dates and columns have different lengths")
        if self.dates.freqstr[0] != "Q":
            raise FrequencyError(f"index frequency is {self.dates.freqstr}, expected quarterly")
        steps = np.diff(self.dates.asi8)
        if len(steps) and not np.all(steps == 1):
            bad = int(np.argmax(steps != 1))
            raise FrequencyError(
                f"quarterly index has a gap or repeat after {self.dates[bad]}"
            )
        for name in self.columns.columns:
            vals = self.columns[name].to_numpy(dtype=float)
            if _has_interior_missing(vals):
                raise DataError(f"column {name!r} has interior missing values")

    def __len__(self):
        return len(self.dates)

    def series(self, name: str) -> np.ndarray:
        return self.columns[name].to_numpy(dtype=float)


def _has_interior_missing(values: np.ndarray) -> bool:
    finite = np.isfinite(values)
    if finite.all() or not finite.any():
        return False
    first, last = np.argmax(finite), len(finite) - 1 - np.argmax(finite[::-1])
    return bool((~finite[first : last + 1]).any())


@dataclass(frozen=True)
class DesignSet:
    """Target, covariates, and conditioning variable for one horizon."""

    horizon: int
    target: np.ndarray
    covariates: np.ndarray
    momentum: np.ndarray
    origin_dates: pd.PeriodIndex
    names: tuple[str, ...] = COVARIATE_NAMES
    dropped: int = 0

    def __post_init__(self):
        n = len(self.target)
        if not (len(self.covariates) == len(self.momentum) == len(self.origin_dates) == n):
            raise DataError("design components have inconsistent lengths")
        if n and not np.allclose(self.covariates[:, 0], 1.0):
            raise DataError("first covariate column must be the intercept")

    def __len__(self):
        return len(self.target)

    @property
    def k(self) -> int:
        return self.covariates.shape[1]

    def subset(self, rows) -> "DesignSet":
        rows = np.asarray(rows)
        return replace(
            self,
            target=self.target[rows],
            covariates=self.covariates[rows],
            momentum=self.momentum[rows],
            origin_dates=self.origin_dates[rows],
            dropped=0,
        )

    def head(self, n: int) -> "DesignSet":
        return self.subset(np.arange(n))


@dataclass(frozen=True)
class ConditioningGrid:
    """Ordered momentum grid with halfway membership bounds.

    Interior bounds are midpoints to the neighbouring points; the first
    interval is open below and the last open above.
    """

    points: np.ndarray
    lo: np.ndarray = field(default=None)
    hi: np.ndarray = field(default=None)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 1 or len(points) == 0:
            raise DataError("grid needs at least one point")
        if np.any(np.diff(points) <= 0):
            raise DataError("grid points must be strictly increasing")
        object.__setattr__(self, "points", points)
        mid = (points[:-1] + points[1:]) / 2.0
        object.__setattr__(self, "lo", np.r_[-np.inf, mid])
        object.__setattr__(self, "hi", np.r_[mid, np.inf])

    def __len__(self):
        return len(self.points)

    def nearest(self, z: float) -> int:
        """Index of the closest grid point; ties go to the lower point,
        out-of-range momentum clamps to the boundary point."""
        d = np.abs(self.points - z)
        return int(np.argmin(d))

    def member_mask(self, z_values: np.ndarray, index: int) -> np.ndarray:
        """Rows whose momentum falls in [lo, hi) of the given point."""
        z = np.asarray(z_values, dtype=float)
        return (z >= self.lo[index]) & (z < self.hi[index])

    @classmethod
    def singleton(cls, point: float = 0.0) -> "ConditioningGrid":
        return cls(points=np.array([point]))


def default_grid() -> ConditioningGrid:
    """Momentum grid from -2 to 2 in steps of 0.2 (21 points)."""
    return ConditioningGrid(points=np.round(np.arange(-2.0, 2.0 + 1e-9, 0.2), 10))


def load_csv(path, schema: Mapping[str, str] | None = None) -> ObservationFrame:
    """Read a quarterly CSV into an ObservationFrame.

    ``schema`` maps canonical roles (inflation, gdp, import, nfci) to the
    column names used in the file; by default canonical names are expected.
    The first column holds dates, either quarterly labels (1973Q1) or
    month-start ISO dates as produced by FRED quarterly exports.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    raw = pd.read_csv(path, dtype=str)
    if raw.shape[1] < 2:
        raise SchemaError("CSV needs a date column plus at least one series")
    schema = dict(schema) if schema else {c: c for c in CANONICAL_COLUMNS}
    for role in CANONICAL_COLUMNS:
        col = schema.get(role, role)
        if col not in raw.columns:
            raise SchemaError(f"missing column {col!r} (role {role!r})")

    dates = _parse_dates(raw.iloc[:, 0])
    data = {}
    for role in CANONICAL_COLUMNS:
        col = schema.get(role, role)
        data[role] = _parse_numeric(raw[col], col)
    frame = pd.DataFrame(data)
    return ObservationFrame(dates=dates, columns=frame)


def _parse_dates(raw: pd.Series) -> pd.PeriodIndex:
    out = []
    for i, val in enumerate(raw):
        text = str(val).strip()
        try:
            if "Q" in text.upper():
                out.append(pd.Period(text, freq="Q"))
            else:
                out.append(pd.Timestamp(text).to_period("Q"))
        except Exception as exc:
            raise ParseError(f"row {i + 2}: unparseable date {text!r}") from exc
    return pd.PeriodIndex(out, freq="Q")


def _parse_numeric(raw: pd.Series, col: str) -> np.ndarray:
    out = np.empty(len(raw), dtype=float)
    for i, val in enumerate(raw):
        text = "" if val is None else str(val).strip()
        if text in ("", ".", "nan", "NaN", "NA"):
            out[i] = np.nan
            continue
        try:
            out[i] = float(text)
        except ValueError as exc:
            raise ParseError(f"row {i + 2}: unparseable value {text!r} in column {col!r}") from exc
    return out


def compute_momentum(y: np.ndarray) -> np.ndarray:
    """First difference of inflation; the first element is missing."""
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise InsufficientDataError("momentum needs at least 2 observations")
    out = np.empty_like(y)
    out[0] = np.nan
    out[1:] = y[1:] - y[:-1]
    return out


def build_design(
    frame: ObservationFrame,
    h: int,
    momentum_lag: int = 0,
    min_rows: int = 10,
) -> DesignSet:
    """Construct the at-risk design for horizon ``h`` (1 or 4 quarters).

    The target is y_{t+1} for h=1 and the mean of y_{t+1..t+4} for h=4.
    Covariates are dated at the origin t. The conditioning variable is
    z_t = y_t - y_{t-1}; ``momentum_lag=1`` switches to the lagged
    alternative z_t = y_{t-1} - y_{t-2}.
    """
    if h not in (1, 4):
        raise DataError(f"horizon must be 1 or 4, got {h}")
    if momentum_lag not in (0, 1):
        raise DataError("momentum_lag must be 0 or 1")

    y = frame.series("inflation")
    n = len(frame)
    mom = compute_momentum(y)
    if momentum_lag == 1:
        mom = np.r_[np.nan, mom[:-1]]

    targets = np.full(n, np.nan)
    if h == 1:
        targets[: n - 1] = y[1:]
    else:
        for t in range(n - 4):
            targets[t] = np.mean(y[t + 1 : t + 5])

    cov = np.column_stack(
        [
            np.ones(n),
            y,
            frame.series("gdp"),
            frame.series("import"),
            frame.series("nfci"),
        ]
    )
    keep = (
        np.isfinite(targets)
        & np.isfinite(mom)
        & np.all(np.isfinite(cov), axis=1)
    )
    kept = int(keep.sum())
    if kept < min_rows:
        raise InsufficientDataError(
            f"only {kept} complete design rows, need at least {min_rows}"
        )
    return DesignSet(
        horizon=h,
        target=targets[keep],
        covariates=cov[keep],
        momentum=mom[keep],
        origin_dates=frame.dates[keep],
        dropped=int(n - kept),
    )


def fetch_fred_series(
    codes: Sequence[str],
    cache_dir=None,
    offline: bool = False,
    session=None,
    timeout: float = 30.0,
) -> list[Path]:
    """Download (or read from cache) one CSV per FRED series code.

    Files are stored as ``<code>.csv`` under ``cache_dir`` (default taken
    from the CPQR_CACHE_DIR environment variable). With ``offline=True``
    only the cache is consulted.
    """
    if cache_dir is None:
        cache_dir = os.environ.get(CACHE_DIR_ENV)
    if cache_dir is None:
        raise DataError("no cache directory given and CPQR_CACHE_DIR unset")
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)

    out = []
    for code in codes:
        dest = cache_dir / f"{code}.csv"
        if dest.exists():
            out.append(dest)
            continue
        if offline:
            raise DataError(f"series {code!r} not cached and offline mode is on")
        sess = session or requests
        try:
            resp = sess.get(_FRED_CSV_URL.format(code=code), timeout=timeout)
            resp.raise_for_status()
        except Exception as exc:
            raise DataError(f"fetch failed for series {code!r}: {exc}") from exc
        dest.write_bytes(resp.content)
        out.append(dest)
    return out


def frame_from_fred_csvs(paths: Mapping[str, "Path | str"]) -> ObservationFrame:
    """Assemble an ObservationFrame from per-role FRED CSV files.

    ``paths`` maps canonical roles to files with columns (date, value).
    Series are aligned on the intersection of their quarterly ranges.
    """
    series = {}
    for role in CANONICAL_COLUMNS:
        if role not in paths:
            raise SchemaError(f"missing file for role {role!r}")
        raw = pd.read_csv(paths[role], dtype=str)
        idx = _parse_dates(raw.iloc[:, 0])
        vals = _parse_numeric(raw.iloc[:, 1], raw.columns[1])
        series[role] = pd.Series(vals, index=idx)
    joined = pd.DataFrame(series).dropna(how="any")
    idx = pd.PeriodIndex(joined.index, freq="Q")
    return ObservationFrame(dates=idx, columns=joined.reset_index(drop=True))
