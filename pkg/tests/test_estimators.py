import itertools

import numpy as np
import pytest

from cpqr.dataprep import ConditioningGrid, build_design, default_grid
from cpqr.errors import EstimationError
from cpqr.estimators import (
    DEFAULT_TAUS,
    CoefficientCube,
    fit_cpqr,
    fit_cqr,
    fit_qar,
    fitted_quantiles,
    predict_quantiles,
    read_cube,
    worst_case_rows,
    write_cube,
)
from cpqr.kernel import BandwidthSpec
from cpqr.solver import QrProblem, solve_weighted_qr

from test_dataprep import make_frame


def small_design(n=80, seed=0):
    return build_design(make_frame(n, seed=seed), 1)


class TestWorstCaseRows:
    def test_template_geometry(self):
        X = np.array([[1.0, 2.0, -1.0], [1.0, 5.0, 3.0], [1.0, 3.0, 0.0]])
        tmpl = worst_case_rows(X)
        assert np.allclose(tmpl.base, [1.0, 2.0, -1.0])
        assert len(tmpl.concave) == 2
        assert np.allclose(tmpl.concave[0], [0.0, 3.0, 0.0])
        assert np.allclose(tmpl.concave[1], [0.0, 0.0, 4.0])

    def test_constant_column_dropped_with_warning(self):
        X = np.column_stack([np.ones(4), np.full(4, 2.5), np.arange(4.0)])
        with pytest.warns(UserWarning, match="column 1"):
            tmpl = worst_case_rows(X)
        assert tmpl.dropped == (1,)
        assert len(tmpl.concave) == 1

    def test_constraint_margin_vertex_oracle(self):
        # the template margin must equal the worst corner of the local
        # bounding box, checked by enumerating all 2^k sign patterns
        rng = np.random.default_rng(3)
        X = np.column_stack([np.ones(12), rng.standard_normal(12), rng.uniform(1, 2, 12)])
        tmpl = worst_case_rows(X)
        cons = tmpl.constraints(2)[0]
        for _ in range(50):
            delta = rng.standard_normal(3) * 0.5
            margin = cons.margin(delta)
            lo = [X[:, j].min() for j in range(1, 3)]
            hi = [X[:, j].max() for j in range(1, 3)]
            corners = []
            for bits in itertools.product((0, 1), repeat=2):
                x = np.r_[1.0, [lo[j] if b == 0 else hi[j] for j, b in enumerate(bits)]]
                corners.append(float(x @ delta))
            assert margin == pytest.approx(min(corners), abs=1e-12)


class TestQar:
    def test_qar1_matches_plain_qr(self):
        design = small_design()
        cube = fit_qar(design, (0.25, 0.75), lags=1)
        for q, tau in enumerate((0.25, 0.75)):
            direct = solve_weighted_qr(
                QrProblem(design.target, design.covariates, np.ones(len(design)), tau)
            )
            assert np.allclose(cube.values[q, 0], direct.coefficients, atol=1e-9)

    def test_qar2_appends_momentum(self):
        design = small_design()
        cube = fit_qar(design, (0.5,), lags=2)
        assert cube.names[-1] == "momentum"
        assert cube.values.shape == (1, 1, design.k + 1)

    def test_ncqar_fits_never_cross_in_sample(self):
        design = small_design(seed=5)
        cube = fit_qar(design, (0.1, 0.5, 0.9), lags=1, noncrossing=True)
        fits = fitted_quantiles(cube, design)
        assert np.all(np.diff(fits, axis=1) >= -1e-8)

    def test_bad_lags(self):
        with pytest.raises(EstimationError):
            fit_qar(small_design(), (0.5,), lags=3)


class TestCpqr:
    def test_uniform_weights_singleton_grid_equals_qar(self):
        design = small_design(seed=7)
        taus = (0.3, 0.7)
        cp = fit_cpqr(design, taus, ConditioningGrid.singleton(0.0), spec=None,
                      noncrossing=False)
        qar = fit_qar(design, taus, lags=1)
        assert np.allclose(cp.values, qar.values, atol=1e-12)

    def test_local_fits_differ_across_grid(self):
        design = small_design(n=200, seed=1)
        grid = ConditioningGrid(points=np.array([-1.0, 1.0]))
        cube = fit_cpqr(design, (0.5,), grid, BandwidthSpec(0.40), noncrossing=False)
        assert not np.allclose(cube.values[0, 0], cube.values[0, 1])

    def test_noncrossing_holds_inside_halfway_bounds(self):
        design = small_design(n=300, seed=2)
        grid = ConditioningGrid(points=np.array([-0.5, 0.5]))
        cube = fit_cpqr(design, (0.1, 0.5, 0.9), grid, BandwidthSpec(0.50))
        for g in range(len(grid)):
            local = grid.member_mask(design.momentum, g)
            fits = design.covariates[local] @ cube.values[:, g, :].T
            assert np.all(np.diff(fits, axis=1) >= -1e-8)

    def test_jobs_identical_output(self):
        design = small_design(n=150, seed=3)
        grid = ConditioningGrid(points=np.array([-0.8, 0.0, 0.8]))
        a = fit_cpqr(design, (0.25, 0.75), grid, BandwidthSpec(0.50), jobs=1)
        b = fit_cpqr(design, (0.25, 0.75), grid, BandwidthSpec(0.50), jobs=3)
        assert np.array_equal(a.values, b.values)

    def test_failure_names_grid_point(self):
        design = small_design()
        bad = ConditioningGrid(points=np.array([50.0]))
        # all rows share the window; duplicate momentum never happens here,
        # so force failure via a collinear design instead
        cov = design.covariates.copy()
        cov[:, 2] = cov[:, 1]
        import dataclasses

        broken = dataclasses.replace(design, covariates=cov)
        with pytest.raises(EstimationError, match="z=50.0"):
            fit_cpqr(broken, (0.5,), bad, None, noncrossing=False)


class TestCqr:
    def test_shared_slopes_across_quantiles(self):
        design = small_design(n=120, seed=4)
        cube = fit_cqr(design, (0.2, 0.5, 0.8))
        slopes = cube.values[:, 0, 1:]
        assert np.allclose(slopes - slopes[0], 0.0, atol=1e-9)

    def test_monotone_intercepts(self):
        design = small_design(n=120, seed=4)
        cube = fit_cqr(design, (0.1, 0.3, 0.5, 0.7, 0.9))
        intercepts = cube.values[:, 0, 0]
        assert np.all(np.diff(intercepts) >= -1e-9)


class TestPrediction:
    def test_nearest_gridpoint_selection(self):
        taus = (0.25, 0.75)
        grid = ConditioningGrid(points=np.array([-1.0, 1.0]))
        values = np.zeros((2, 2, 1))
        values[:, 0, 0] = [10.0, 20.0]
        values[:, 1, 0] = [30.0, 40.0]
        cube = CoefficientCube(taus=taus, grid=grid, names=("intercept",), values=values)
        d = predict_quantiles(cube, np.array([1.0]), momentum=0.9)
        assert np.allclose(d.raw_quantiles, [30.0, 40.0])
        d = predict_quantiles(cube, np.array([1.0]), momentum=-3.0)
        assert np.allclose(d.raw_quantiles, [10.0, 20.0])

    def test_rearrangement_sorts(self):
        taus = (0.25, 0.75)
        grid = ConditioningGrid.singleton()
        values = np.array([[[5.0]], [[2.0]]])
        cube = CoefficientCube(taus=taus, grid=grid, names=("intercept",), values=values)
        d = predict_quantiles(cube, np.array([1.0]), momentum=0.0)
        assert list(d.raw_quantiles) == [5.0, 2.0]
        assert list(d.rearranged_quantiles) == [2.0, 5.0]

    def test_wrong_covariate_length(self):
        cube = fit_qar(small_design(), (0.5,))
        with pytest.raises(EstimationError):
            predict_quantiles(cube, np.ones(3), momentum=0.0)


class TestSerialization:
    def test_round_trip_exact(self, tmp_path):
        design = small_design(n=100, seed=6)
        cube = fit_cpqr(design, (0.25, 0.5, 0.75),
                        ConditioningGrid(points=np.array([-0.5, 0.5])),
                        BandwidthSpec(0.50))
        write_cube(cube, tmp_path, stem="demo")
        back = read_cube(tmp_path, stem="demo")
        assert np.array_equal(back.values, cube.values)
        assert back.taus == cube.taus
        assert back.names == cube.names
        assert back.bandwidth == cube.bandwidth
        assert np.array_equal(back.grid.points, cube.grid.points)

    def test_sidecar_carries_no_bandwidth_for_qar(self, tmp_path):
        cube = fit_qar(small_design(), (0.5,))
        write_cube(cube, tmp_path, stem="qar")
        back = read_cube(tmp_path, stem="qar")
        assert back.bandwidth is None


def test_default_taus():
    assert len(DEFAULT_TAUS) == 19
    assert DEFAULT_TAUS[0] == 0.05
    assert DEFAULT_TAUS[-1] == 0.95
