"""Block-bootstrap coefficient variability and Hausman-type decision maps.

The Hausman machinery compares the conditionally parametric estimator
(consistent along both nonlinearities) against its two restricted,
efficient counterparts: the composite fit (no quantile variation) and the
two-lag quantile autoregression (no momentum conditioning).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .dataprep import DesignSet
from .errors import InferenceError
from .estimators import CoefficientCube

BOOTSTRAP_CAVEAT = (
    "bootstrap-based intervals may be too narrow for expanding-window "
    "time series; treat rejections as indicative"
)


@dataclass(frozen=True)
class BootstrapEnsemble:
    """A point-estimate cube plus bootstrap replicate cubes."""

    point: CoefficientCube
    replicates: tuple
    block_length: int
    seed: int
    dropped: int = 0

    def __post_init__(self):
        if len(self.replicates) < 2:
            raise InferenceError("need at least 2 bootstrap replicates")
        ref = self.point
        for cube in self.replicates:
            if (
                cube.taus != ref.taus
                or cube.names != ref.names
                or len(cube.grid) != len(ref.grid)
            ):
                raise InferenceError("replicate cubes are not aligned with the point fit")

    @property
    def b(self) -> int:
        return len(self.replicates)

    def variance(self) -> np.ndarray:
        """Elementwise bootstrap variance, same shape as the cube values."""
        stackv = np.stack([c.values for c in self.replicates], axis=0)
        return stackv.var(axis=0, ddof=1)


@dataclass(frozen=True)
class HausmanResult:
    statistic: float
    dof: int
    p_value: float
    cell: tuple
    degenerate: bool = False


def circular_block_indices(t: int, block_length: int, rng) -> np.ndarray:
    """Circular block bootstrap index vector of length t."""
    if block_length < 1:
        raise InferenceError("block length must be >= 1")
    n_blocks = -(-t // block_length)
    starts = rng.integers(0, t, size=n_blocks)
    idx = (starts[:, None] + np.arange(block_length)[None, :]) % t
    return idx.reshape(-1)[:t]


def default_block_length(t: int) -> int:
    return int(np.ceil(t ** (1.0 / 3.0)))


def block_bootstrap(
    design: DesignSet,
    fit_fn,
    b: int,
    block_length: int | None = None,
    seed: int = 0,
) -> BootstrapEnsemble:
    """Refit ``fit_fn`` on circular-block resamples of the design rows.

    ``fit_fn`` is a closure capturing the estimator configuration; in
    particular any bandwidth must be held fixed at its original value.
    Replicate substreams derive from (seed, replicate index) so results do
    not depend on evaluation order. Failed replicates are dropped; more
    than 20% failures is an error.
    """
    if b < 2:
        raise InferenceError("need at least 2 replicates")
    t = len(design)
    length = block_length if block_length is not None else default_block_length(t)
    point = fit_fn(design)

    replicates = []
    dropped = 0
    for i in range(b):
        rng = np.random.default_rng([seed, i])
        idx = circular_block_indices(t, length, rng)
        try:
            replicates.append(fit_fn(design.subset(idx)))
        except Exception:
            dropped += 1
    if dropped > 0.2 * b:
        raise InferenceError(f"{dropped} of {b} bootstrap replicates failed")
    return BootstrapEnsemble(
        point=point,
        replicates=tuple(replicates),
        block_length=length,
        seed=seed,
        dropped=dropped,
    )


def hausman_statistic(beta_e, beta_c, var_e, var_c, cell=("", "")) -> HausmanResult:
    """Wald statistic for the repeated efficient estimate against the
    consistent one, with a pseudo-inverse on the diagonal variance gap.

    Negative diagonal entries (efficient variance exceeding consistent
    variance in finite samples) are truncated to zero and excluded from
    the degrees of freedom.
    """
    beta_e = np.atleast_1d(np.asarray(beta_e, float)).ravel()
    beta_c = np.atleast_1d(np.asarray(beta_c, float)).ravel()
    var_e = np.atleast_1d(np.asarray(var_e, float)).ravel()
    var_c = np.atleast_1d(np.asarray(var_c, float)).ravel()
    if beta_c.size % beta_e.size != 0:
        raise InferenceError(
            f"consistent vector of size {beta_c.size} is not a multiple of "
            f"the efficient vector size {beta_e.size}"
        )
    r = beta_c.size // beta_e.size
    d = np.tile(beta_e, r) - beta_c
    v = np.tile(var_e, r)
    gap = var_c - v
    positive = gap > 0.0
    dof = int(positive.sum())
    if dof == 0:
        warnings.warn(f"degenerate Hausman cell {cell}: no positive variance gap")
        return HausmanResult(0.0, 0, 1.0, cell, degenerate=True)
    h = float(np.sum(d[positive] ** 2 / gap[positive]))
    p = float(stats.chi2.sf(h, dof))
    return HausmanResult(h, dof, p, cell)


@dataclass(frozen=True)
class DecisionMaps:
    """Binary Hausman decisions: 1 where the conditionally parametric fit
    is preferred over the efficient restriction."""

    level: float
    quantile_variation: dict  # covariate -> list of HausmanResult over grid points
    momentum: dict  # covariate -> list of HausmanResult over taus
    caveat: str = BOOTSTRAP_CAVEAT

    def decisions(self, which: str, covariate: str) -> np.ndarray:
        cells = getattr(self, which)[covariate]
        return np.array([1 if c.p_value < self.level else 0 for c in cells])


def hausman_maps(
    cpqr_ens: BootstrapEnsemble,
    cqr_ens: BootstrapEnsemble,
    qar2_ens: BootstrapEnsemble,
    level: float = 0.05,
) -> DecisionMaps:
    """Two decision maps per covariate.

    Quantile-variation map (one cell per grid point): the CPQR coefficient
    profile across taus at fixed z against the composite slope there.
    Momentum map (one cell per tau): the CPQR profile across grid points
    at fixed tau against the two-lag autoregression coefficient.
    """
    cp = cpqr_ens.point
    if cqr_ens.point.taus != cp.taus or len(cqr_ens.point.grid) != len(cp.grid):
        raise InferenceError("CPQR and CQR ensembles are not aligned")
    if qar2_ens.point.taus != cp.taus:
        raise InferenceError("CPQR and QAR(2) ensembles are not aligned")

    var_cp = cpqr_ens.variance()
    var_cq = cqr_ens.variance()
    var_qar = qar2_ens.variance()

    shared = [
        name
        for name in cp.names
        if name not in ("intercept", "momentum") and name in qar2_ens.point.names
    ]
    qv = {}
    mm = {}
    for name in shared:
        k = cp.names.index(name)
        k_cq = cqr_ens.point.names.index(name)
        k_qar = qar2_ens.point.names.index(name)

        cells = []
        for g, z in enumerate(cp.grid.points):
            cells.append(
                hausman_statistic(
                    beta_e=cqr_ens.point.values[0, g, k_cq],
                    beta_c=cp.values[:, g, k],
                    var_e=var_cq[0, g, k_cq],
                    var_c=var_cp[:, g, k],
                    cell=(name, f"z={z}"),
                )
            )
        qv[name] = cells

        cells = []
        for q, tau in enumerate(cp.taus):
            cells.append(
                hausman_statistic(
                    beta_e=qar2_ens.point.values[q, 0, k_qar],
                    beta_c=cp.values[q, :, k],
                    var_e=var_qar[q, 0, k_qar],
                    var_c=var_cp[q, :, k],
                    cell=(name, f"tau={tau}"),
                )
            )
        mm[name] = cells
    return DecisionMaps(level=level, quantile_variation=qv, momentum=mm)


def write_decision_maps(maps: DecisionMaps, out_path):
    """CSV serialization: covariate, axis, coordinate, decision, p_value, flag."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(f"# caveat: {maps.caveat}\n")
        fh.write("covariate,axis,coordinate,decision,p_value,degenerate\n")
        for axis, table in (
            ("grid", maps.quantile_variation),
            ("tau", maps.momentum),
        ):
            for name, cells in table.items():
                for cell in cells:
                    decision = 1 if cell.p_value < maps.level else 0
                    coord = cell.cell[1].split("=")[1]
                    fh.write(
                        f"{name},{axis},{coord},{decision},"
                        f"{cell.p_value!r},{int(cell.degenerate)}\n"
                    )
    return out_path
