import numpy as np
import pytest

from obsgrid.geometry import DensityField, l1_distance, make_grid
from obsgrid.limit import (cesaro_mean, estimate_bathtub_constant, kkt_check,
                           limit_set, sigma1, sliding_ratio, tube_linearity)
from obsgrid.optimize import OptOptions
from obsgrid.spectral import build_model

from conftest import interval_indicator, random_feasible

PI = np.pi
INV_2PI = 0.1591549430918953357688837633725143620345


@pytest.fixture(scope="module")
def grid2048(d1d):
    return make_grid(d1d.domain, 2048, 3)


@pytest.fixture(scope="module")
def sol05(d1d, grid2048):
    return limit_set(d1d, grid2048, 0.5)


class TestSigma1:
    def test_constant(self, d1d, grid512):
        a = DensityField(grid512, np.full(grid512.ncells, 0.5))
        assert sigma1(d1d, grid512, a) == pytest.approx(0.5, abs=1e-9)

    def test_indicator(self, d1d, grid1024):
        a = interval_indicator(grid1024, PI / 4, 3 * PI / 4)
        assert sigma1(d1d, grid1024, a) == pytest.approx(0.81830988618379067, abs=1e-8)

    def test_torus_perturbation_invariance(self, torus, torus_grid):
        # perturbations orthogonal to {1, cos 2x, sin 2x} leave sigma_1 at L
        x = torus_grid.centers[:, 0]
        base = DensityField(torus_grid, np.full(torus_grid.ncells, 0.5))
        s0 = sigma1(torus, torus_grid, base)
        for eta, mix in ((0.05, np.cos(x) + np.cos(3 * x)),
                         (0.08, np.sin(x) - 0.5 * np.sin(4 * x))):
            a = DensityField(torus_grid, 0.5 + eta * mix / np.abs(mix).max())
            assert sigma1(torus, torus_grid, a) == pytest.approx(s0, abs=1e-9)


class TestLimitSet:
    def test_dirichlet_closed_forms(self, d1d, grid2048):
        for L in (0.3, 0.5, 0.7):
            sol = limit_set(d1d, grid2048, L)
            mu_exp = (2 / PI) * np.sin(PI * (1 - L) / 2) ** 2
            val_exp = L + np.sin(PI * L) / PI
            assert sol.mu_star == pytest.approx(mu_exp, abs=1e-6)
            assert sol.sigma1_value == pytest.approx(val_exp, abs=1e-6)
            assert not sol.degenerate
            assert kkt_check(d1d, grid2048, sol).passed

    def test_dirichlet_maximizer_is_centered_interval(self, d1d, grid2048):
        sol = limit_set(d1d, grid2048, 0.5)
        ind = interval_indicator(grid2048, PI / 4, 3 * PI / 4)
        assert l1_distance(sol.a1, ind) <= 2 * grid2048.cell_measures[0]

    def test_rect_2d_blob(self):
        m = build_model("dirichlet_rect_2d", 4)
        g = make_grid(m.domain, (96, 96), 3)
        sol = limit_set(m, g, 0.3)
        assert sol.a1.mean() == pytest.approx(0.3, abs=1e-12)
        # superlevel set of sin^2(pi x) sin^2(pi y): a centered blob
        inside = sol.a1.values > 0.5
        centers = g.centers[inside]
        assert np.abs(centers.mean(axis=0) - 0.5).max() <= 1e-3
        psi_c = 4 * (np.sin(PI * centers[:, 0]) * np.sin(PI * centers[:, 1])) ** 2
        assert psi_c.min() >= sol.mu_star - 0.05 * sol.mu_star
        assert kkt_check(m, g, sol).passed

    def test_rect_2d_within_one_cell_layer(self):
        # deviation from the exact continuum superlevel set is confined to
        # a one-cell boundary layer: L1 distance <= perimeter * cell size
        m = build_model("dirichlet_rect_2d", 4)
        g = make_grid(m.domain, (96, 96), 3)
        sol = limit_set(m, g, 0.3)
        psi_exact = 4 * (np.sin(PI * g.centers[:, 0])
                         * np.sin(PI * g.centers[:, 1])) ** 2
        exact = DensityField(g, (psi_exact > sol.mu_star).astype(float))
        # the blob at L=0.3 has perimeter ~ 2, cell size 1/96
        assert l1_distance(sol.a1, exact) <= 2.5 * (1 / 96)

    def test_torus_degenerate(self, torus, torus_grid):
        sol = limit_set(torus, torus_grid, 0.5)
        assert sol.degenerate
        assert sol.sigma1_value == pytest.approx(0.5, abs=1e-9)

    def test_uniqueness_witness_two_starts(self, d1d, grid1024):
        # different optimizer initializations land on the same maximizer
        rng = np.random.default_rng(0)
        sol_a = limit_set(d1d, grid1024, 0.4)
        init = random_feasible(grid1024, 0.4, rng)
        sol_b = limit_set(d1d, grid1024, 0.4, OptOptions(init=init))
        assert l1_distance(sol_a.a1, sol_b.a1) <= grid1024.cell_measures[0]


class TestKKT:
    def test_pass_on_solution(self, d1d, grid2048, sol05):
        rep = kkt_check(d1d, grid2048, sol05)
        assert rep.passed
        assert rep.min_inside_minus_mu >= -rep.tol
        assert rep.mu_minus_max_outside >= -rep.tol

    def test_fail_on_shifted_interval(self, d1d, grid2048, sol05):
        from obsgrid.limit import LimitSolution
        shifted = interval_indicator(grid2048, PI / 4 + 0.1, 3 * PI / 4 + 0.1)
        bad = LimitSolution(shifted, sol05.mu_star, sol05.psi,
                            sol05.alphas, False, 0.0)
        assert not kkt_check(d1d, grid2048, bad).passed

    def test_fail_on_constant_density(self, d1d, grid2048, sol05):
        from obsgrid.limit import LimitSolution
        flat = DensityField(grid2048, np.full(grid2048.ncells, 0.5))
        bad = LimitSolution(flat, sol05.mu_star, sol05.psi,
                            sol05.alphas, False, 0.0)
        assert not kkt_check(d1d, grid2048, bad).passed


class TestBathtubConstant:
    def test_numerators_nonnegative(self, d1d, grid1024):
        sol = limit_set(d1d, grid1024, 0.5)
        rng = np.random.default_rng(1)
        s1 = sol.sigma1_value
        for _ in range(200):
            a = random_feasible(grid1024, 0.5, rng)
            assert s1 - sigma1(d1d, grid1024, a) >= -1e-10

    def test_sliding_ratio_matches_taylor_oracle(self, d1d, grid2048, sol05):
        # second-order Taylor: sigma drop = (2/pi) h^2 (1 - h^2/3), |.|_1 = 2h
        for h in (0.01, 0.03, 0.05):
            got = sliding_ratio(d1d, grid2048, sol05, h)
            oracle = (2 / PI) * h ** 2 * (1 - h ** 2 / 3) / (2 * h) ** 2
            assert got == pytest.approx(oracle, rel=0.05)
            assert got == pytest.approx(INV_2PI, rel=0.2)

    def test_khat_positive_over_seeded_samples(self, d1d, grid1024):
        sol = limit_set(d1d, grid1024, 0.5)
        ke = estimate_bathtub_constant(d1d, grid1024, sol,
                                       n_samples=1000, seed=42)
        assert ke.k_hat > 0
        assert ke.n_used >= 900
        assert set(ke.family_mins) == {"slide", "bathtub", "project"}

    def test_deterministic_given_seed(self, d1d, grid1024):
        sol = limit_set(d1d, grid1024, 0.5)
        a = estimate_bathtub_constant(d1d, grid1024, sol, n_samples=150, seed=7)
        b = estimate_bathtub_constant(d1d, grid1024, sol, n_samples=150, seed=7)
        assert a.k_hat == b.k_hat

    def test_out_of_sample_quadratic_bound(self, d1d, grid1024):
        # fresh batch obeys the halved sampled constant
        sol = limit_set(d1d, grid1024, 0.5)
        ke = estimate_bathtub_constant(d1d, grid1024, sol,
                                       n_samples=1000, seed=0)
        rng = np.random.default_rng(10_001)
        s1 = sol.sigma1_value
        for _ in range(300):
            a = random_feasible(grid1024, 0.5, rng, smooth=bool(rng.integers(2)))
            d = l1_distance(a, sol.a1)
            if d < 1e-9:
                continue
            drop = s1 - sigma1(d1d, grid1024, a)
            assert drop >= 0.5 * ke.k_hat * d ** 2 - 1e-12

    def test_shift_density_preserves_mass_2d(self):
        from obsgrid.limit import _shift_density
        m = build_model("dirichlet_rect_2d", 4)
        g = make_grid(m.domain, (24, 24), 2)
        rng = np.random.default_rng(5)
        vals = rng.uniform(0, 1, g.ncells)
        mass0 = vals @ g.cell_measures
        for axis in (0, 1):
            for h in (0.013, 0.2, 0.777):
                shifted = _shift_density(g, vals, h, axis)
                assert shifted @ g.cell_measures == pytest.approx(mass0, rel=1e-12)
                assert shifted.min() >= -1e-15 and shifted.max() <= 1 + 1e-15

    def test_khat_2d(self):
        m = build_model("dirichlet_rect_2d", 4)
        g = make_grid(m.domain, (48, 48), 2)
        sol = limit_set(m, g, 0.3)
        ke = estimate_bathtub_constant(m, g, sol, n_samples=120, seed=1)
        assert ke.k_hat > 0

    def test_degenerate_rejected(self, torus, torus_grid):
        sol = limit_set(torus, torus_grid, 0.5)
        with pytest.raises(ValueError):
            estimate_bathtub_constant(torus, torus_grid, sol)


class TestTubeLinearity:
    def test_dirichlet_slope(self, d1d, grid2048, sol05):
        m_hat, resid = tube_linearity(d1d, grid2048, sol05)
        assert m_hat == pytest.approx(2 * PI, rel=0.05)
        assert resid <= 0.05

    def test_constant_psi_rejected(self, d1d, grid512, sol05):
        from obsgrid.limit import LimitSolution
        from obsgrid.geometry import SpatialFunction
        flat_psi = SpatialFunction(grid512, np.full(grid512.ncells, 1.0))
        a = DensityField(grid512, np.full(grid512.ncells, 0.5))
        bad = LimitSolution(a, 1.0, flat_psi, np.ones(1), False, 0.5)
        with pytest.raises(ValueError):
            tube_linearity(d1d, grid512, bad)


class TestCesaroMean:
    def test_single_mode(self, d1d, grid512):
        ces = cesaro_mean(d1d, grid512, 1)
        ref = (2 / PI) * np.sin(grid512.centers[:, 0]) ** 2
        assert np.abs(ces.values - ref).max() <= 1e-4

    def test_midpoint_trend(self):
        m = build_model("dirichlet_1d", 64)
        g = make_grid(m.domain, 1024, 3)
        mid = np.argmin(np.abs(g.centers[:, 0] - PI / 2))
        dev64 = abs(cesaro_mean(m, g, 64).values[mid] - 1 / PI)
        assert dev64 <= 0.02

    def test_compact_deviation_at_64(self):
        m = build_model("dirichlet_1d", 64)
        g = make_grid(m.domain, 1024, 3)
        mask = (g.centers[:, 0] >= PI / 4) & (g.centers[:, 0] <= 3 * PI / 4)
        dev = np.abs(cesaro_mean(m, g, 64).values[mask] - 1 / PI).max()
        assert dev <= 0.02

    def test_monotone_interior_l1_trend(self):
        m = build_model("dirichlet_1d", 64)
        g = make_grid(m.domain, 1024, 3)
        mask = (g.centers[:, 0] >= PI / 4) & (g.centers[:, 0] <= 3 * PI / 4)
        devs = []
        for N in (8, 16, 32, 64):
            ces = cesaro_mean(m, g, N)
            devs.append(float(np.abs(ces.values[mask] - 1 / PI)
                              @ g.cell_measures[mask]))
        assert all(b < a for a, b in zip(devs, devs[1:]))


class TestSigma1Properties:
    def test_concavity(self, d1d, grid512):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = random_feasible(grid512, 0.5, rng)
            b = random_feasible(grid512, 0.5, rng)
            sa, sb = sigma1(d1d, grid512, a), sigma1(d1d, grid512, b)
            for th in (0.3, 0.5, 0.8):
                mix = DensityField(grid512, th * a.values + (1 - th) * b.values)
                assert sigma1(d1d, grid512, mix) >= th * sa + (1 - th) * sb - 1e-9

    def test_torus_two_distinct_maximizers(self, torus, torus_grid):
        x = torus_grid.centers[:, 0]
        base = DensityField(torus_grid, np.full(torus_grid.ncells, 0.5))
        pert = DensityField(torus_grid, 0.5 + 0.3 * np.cos(x))
        s0, s1v = sigma1(torus, torus_grid, base), sigma1(torus, torus_grid, pert)
        assert abs(s0 - s1v) <= 1e-9
        assert l1_distance(base, pert) > 0.1
