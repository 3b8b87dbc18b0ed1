import math

import numpy as np
import pytest

from cpqr.dataprep import build_design, default_grid
from cpqr.errors import SelectionError
from cpqr.kernel import (
    FRACTION_GRID,
    BandwidthSpec,
    cv_losses,
    select_bandwidth,
    tricube_weights,
)

from test_dataprep import make_frame


class TestBandwidthSpec:
    def test_grid_members_accepted(self):
        for f in FRACTION_GRID:
            assert BandwidthSpec(f).quantile_fraction == f

    def test_off_grid_rejected(self):
        for bad in (0.05, 0.12, 0.95, -0.3):
            with pytest.raises(SelectionError):
                BandwidthSpec(bad)

    def test_window_count(self):
        assert BandwidthSpec(0.25).window_count(100) == 25
        assert BandwidthSpec(0.25).window_count(101) == 26  # ceil
        assert BandwidthSpec(0.10).window_count(7) == 1
        assert BandwidthSpec(0.90).window_count(3) == 3


class TestTricube:
    def test_formula_matches_direct_recomputation(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal(40)
        spec = BandwidthSpec(0.30)
        target = 0.4
        w = tricube_weights(z, target, spec)
        d = np.abs(z - target)
        d_tau = np.sort(d)[spec.window_count(40) - 1]
        expect = np.where(d <= d_tau, (1 - (d / d_tau) ** 3) ** 3 / d_tau, 0.0)
        assert np.allclose(w, expect, atol=1e-15)

    def test_outside_window_zero_inside_positive(self):
        z = np.arange(10.0)
        w = tricube_weights(z, 0.0, BandwidthSpec(0.30))
        # m = 3, radius = 2: points 0 and 1 positive, boundary point 2 zero
        assert w[0] > w[1] > 0.0
        assert np.all(w[2:] == 0.0)

    def test_zero_radius_uniform_fallback(self):
        z = np.array([1.0, 1.0, 1.0, 5.0])
        with pytest.warns(UserWarning, match="radius is zero"):
            w = tricube_weights(z, 1.0, BandwidthSpec(0.50))
        assert np.allclose(w[:3], 1.0 / 3.0)
        assert w[3] == 0.0

    def test_window_widens_for_min_positive(self):
        z = np.arange(20.0)
        with pytest.warns(UserWarning, match="widening"):
            w = tricube_weights(z, 0.0, BandwidthSpec(0.10), min_positive=4)
        assert int((w > 0).sum()) >= 4

    def test_weights_shrink_with_distance(self):
        z = np.linspace(-1, 1, 30)
        w = tricube_weights(z, 0.0, BandwidthSpec(0.50))
        d = np.abs(z)
        inside = w > 0
        order = np.argsort(d[inside])
        assert np.all(np.diff(w[inside][order]) <= 1e-15)


class TestSelection:
    def test_argmin_selection(self):
        table = {0.10: 0.9, 0.20: 0.4, 0.30: 0.7}
        assert select_bandwidth(table).quantile_fraction == 0.20

    def test_tie_breaks_to_larger_fraction(self):
        table = {0.10: 0.5, 0.50: 0.5, 0.30: 0.8}
        assert select_bandwidth(table).quantile_fraction == 0.50

    def test_infinite_losses_skipped(self):
        table = {0.10: math.inf, 0.20: 0.3}
        assert select_bandwidth(table).quantile_fraction == 0.20
        with pytest.raises(SelectionError):
            select_bandwidth({0.10: math.inf})
        with pytest.raises(SelectionError):
            select_bandwidth({})

    def test_cv_losses_deterministic_and_complete(self):
        design = build_design(make_frame(90, seed=4), 1)
        table = cv_losses(design, (0.5,), default_grid(), fractions=(0.30, 0.90))
        again = cv_losses(design, (0.5,), default_grid(), fractions=(0.30, 0.90))
        assert table == again
        assert set(table) == {0.30, 0.90}
        assert all(v >= 0 for v in table.values())

    def test_cv_prefers_wide_window_under_homogeneity(self):
        # location-shift data with slope constant in momentum: the widest
        # window sees the most data and should win (or tie) against the
        # narrowest one on average
        rng = np.random.default_rng(11)
        wins = 0
        for rep in range(5):
            frame = make_frame(160, seed=100 + rep)
            y = np.zeros(160)
            for t in range(1, 160):
                y[t] = 0.4 * y[t - 1] + rng.standard_normal()
            frame.columns["inflation"] = y
            design = build_design(frame, 1)
            table = cv_losses(design, (0.25, 0.5, 0.75), default_grid(),
                              fractions=(0.10, 0.90))
            if table[0.90] <= table[0.10]:
                wins += 1
        assert wins >= 3
