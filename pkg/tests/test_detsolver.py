import csv
import math

import numpy as np
import pytest

from tgflab.detsolver import (
    BlowUpError,
    SolverConfig,
    absorbing_entry_time,
    contraction_check,
    contraction_windows,
    energy_identity_defect,
    energy_residual,
    find_singleton,
    integrate,
    step_det,
    write_diagnostics_csv,
)
from tgflab.field import GridSpec, SpectralField, norm, random_divfree_field, taylor_green
from tgflab.operators import FluidParams, estimate_md

from test_field import sin_y


@pytest.fixture(scope="module")
def grid():
    return GridSpec(16)


@pytest.fixture(scope="module")
def params(grid):
    return FluidParams(nu=1.0, alpha=0.5, beta=1.0).with_md(estimate_md(grid))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"dt": 0.0}, {"steady_tol": 0.0}, {"monitor_stride": 0}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)

    def test_steps(self):
        assert SolverConfig(dt=1e-3, t_end=2.0).steps == 2000


class TestStep:
    def test_rest_state(self, grid, params):
        z = SpectralField.zeros(grid)
        assert not step_det(z, z, params, 1e-3).coeffs.any()

    def test_integrating_factor_exact(self):
        grid = GridSpec(32)
        p = FluidParams(nu=0.3, alpha=0.0, beta=1e-300)
        m = sin_y(grid)  # convection-free eigenfield with |k|^2 = 1
        out = step_det(m, SpectralField.zeros(grid), p, 0.05)
        expected = math.exp(-0.3 * 0.05) * m.coeffs
        assert np.abs(out.coeffs - expected).max() <= 1e-15

    def test_unforced_single_step_dissipates(self, grid, params):
        dt = 1e-3
        for seed in range(5):
            m = random_divfree_field(grid, 2.0, seed=seed, l2=2.0)
            m1 = step_det(m, SpectralField.zeros(grid), params, dt)
            assert norm(m1) <= norm(m) + dt**2

    def test_invariants_preserved(self, grid, params):
        m = random_divfree_field(grid, 2.0, seed=1, l2=1.0)
        g = taylor_green(grid, 0.2)
        for _ in range(50):
            m = step_det(m, g, params, 1e-3)
            assert m.divergence_error() <= 1e-12
            assert np.all(m.coeffs[:, 0, 0] == 0)

    def test_blow_up_names_step(self, grid, params):
        m = random_divfree_field(grid, 2.0, seed=1)
        m.coeffs[0, 1, 1] = np.nan
        with pytest.raises(BlowUpError, match="step"):
            integrate(m, SpectralField.zeros(grid), params, SolverConfig(dt=1e-3, t_end=0.01, monitor_stride=5))

    def test_halving_on_stiff_state(self, grid, params):
        m = random_divfree_field(grid, 1.5, seed=2, l2=20.0)
        dt = 1e-2
        out = step_det(m, SpectralField.zeros(grid), params, dt)
        assert np.isfinite(out.coeffs).all()
        assert norm(out) < norm(m)

    def test_unforced_energy_monotone_n64(self):
        grid = GridSpec(64)
        p = FluidParams(nu=1.0, alpha=0.5, beta=1.0)
        m = random_divfree_field(grid, 2.0, seed=3, l2=3.0)
        _, rec = integrate(m, SpectralField.zeros(grid), p, SolverConfig(dt=1e-3, t_end=0.2, monitor_stride=1))
        scale = rec.l2_norm[0]
        assert np.all(np.diff(rec.l2_norm) <= 1e-12 * scale)


class TestEnergyResidual:
    def test_rest_state_zero(self, grid, params):
        z = SpectralField.zeros(grid)
        _, rec = integrate(z, z, params, SolverConfig(dt=1e-3, t_end=0.1))
        assert energy_residual(rec, params) == 0.0

    def test_identity_defect_first_order(self, grid, params):
        m0 = random_divfree_field(grid, 3.0, seed=4, l2=1.0)
        g = taylor_green(grid, 0.2)
        worst = []
        for dt in (2e-3, 1e-3):
            _, rec = integrate(m0, g, params, SolverConfig(dt=dt, t_end=1.0, monitor_stride=1))
            d = energy_identity_defect(rec, params)
            worst.append(np.abs(d[rec.times[1:] > 0.2]).max())
        assert 0.4 <= worst[1] / worst[0] <= 0.6

    def test_decaying_residual_halves(self, grid, params):
        """Residual of the dissipation inequality under dt -> dt/2, unforced."""
        m0 = random_divfree_field(grid, 3.0, seed=5, l2=1.0)
        z = SpectralField.zeros(grid)
        res = []
        for dt in (2e-3, 1e-3):
            _, rec = integrate(m0, z, params, SolverConfig(dt=dt, t_end=1.0, monitor_stride=int(round(0.02 / dt))))
            res.append(energy_residual(rec, params))
        assert 0.35 <= res[1] / res[0] <= 0.65


class TestAbsorbing:
    def test_entry_time_and_bound(self, grid, params):
        m0 = random_divfree_field(grid, 3.0, seed=6, l2=2.0)
        g = taylor_green(grid, 0.2)
        _, rec = integrate(m0, g, params, SolverConfig(dt=1e-3, t_end=4.0, monitor_stride=20))
        T = rec.absorbing_entry_time
        assert 0 < T < 3.0
        bound = rec.g_hm1**2 / (params.nu_star**2 * params.lam)
        assert np.all(rec.l2_norm[rec.times >= T] ** 2 <= bound)

    def test_never_inside(self, grid, params):
        m0 = random_divfree_field(grid, 3.0, seed=6, l2=5.0)
        g = taylor_green(grid, 0.01)
        _, rec = integrate(m0, g, params, SolverConfig(dt=1e-3, t_end=0.2, monitor_stride=20))
        assert math.isnan(absorbing_entry_time(rec, params))


class TestContraction:
    def _pair(self, grid, params, g, t_end=2.0):
        cfg = SolverConfig(dt=1e-3, t_end=t_end, monitor_stride=20)
        a = random_divfree_field(grid, 3.0, seed=7, l2=1.0)
        b = random_divfree_field(grid, 3.0, seed=8, l2=0.5)
        _, ra = integrate(a, g, params, cfg, keep_states=True)
        _, rb = integrate(b, g, params, cfg, keep_states=True)
        return ra, rb

    def test_identical_trajectories(self, grid, params):
        cfg = SolverConfig(dt=1e-3, t_end=0.5, monitor_stride=20)
        a = random_divfree_field(grid, 3.0, seed=7)
        g = taylor_green(grid, 0.2)
        _, ra = integrate(a, g, params, cfg, keep_states=True)
        _, rb = integrate(a, g, params, cfg, keep_states=True)
        assert all(np.array_equal(x, y) for x, y in zip(ra.snapshots, rb.snapshots))
        res = contraction_check(ra, rb, params)
        assert res.observed_ratio == 0.0 and res.ok

    def test_unforced_against_rest(self, grid, params):
        z = SpectralField.zeros(grid)
        cfg = SolverConfig(dt=1e-3, t_end=1.0, monitor_stride=20)
        _, r0 = integrate(z, z, params, cfg, keep_states=True)
        _, r1 = integrate(random_divfree_field(grid, 3.0, seed=9, l2=1.0), z, params, cfg, keep_states=True)
        res = contraction_check(r0, r1, params)
        assert res.bound == pytest.approx(math.exp(-params.nu * params.eps0 * params.lam * 1.0))
        assert res.ok

    def test_small_forcing_windows(self, grid, params):
        ra, rb = self._pair(grid, params, taylor_green(grid, 0.2))
        results = contraction_windows(ra, rb, params, windows=10)
        assert len(results) == 10
        assert all(r.ok for r in results)

    def test_requires_snapshots(self, grid, params):
        z = SpectralField.zeros(grid)
        _, r = integrate(z, z, params, SolverConfig(dt=1e-3, t_end=0.1))
        with pytest.raises(ValueError):
            contraction_check(r, r, params)

    def test_mismatched_grids(self, grid, params):
        z = SpectralField.zeros(grid)
        _, r1 = integrate(z, z, params, SolverConfig(dt=1e-3, t_end=0.1), keep_states=True)
        _, r2 = integrate(z, z, params, SolverConfig(dt=1e-3, t_end=0.2), keep_states=True)
        with pytest.raises(ValueError):
            contraction_check(r1, r2, params)


class TestSingleton:
    def test_zero_forcing_limit(self, grid, params):
        z = SpectralField.zeros(grid)
        ics = [random_divfree_field(grid, 3.0, seed=s, l2=1.0) for s in range(3)]
        res = find_singleton(z, params, SolverConfig(dt=2e-3, t_end=22.0, monitor_stride=50), ics)
        assert res.converged
        assert norm(res.a_star) < 1e-8

    def test_small_forcing_converges(self, grid, params):
        g = taylor_green(grid, 0.2)
        ics = [random_divfree_field(grid, 3.0, seed=s, l2=1.0) for s in range(3)]
        res = find_singleton(g, params, SolverConfig(dt=2e-3, t_end=25.0, monitor_stride=50), ics)
        assert res.rho > 0
        assert res.converged and res.max_pairwise_dist < 1e-8

    def test_warns_when_rho_not_positive(self, grid, params):
        g = taylor_green(grid, 0.5)
        with pytest.warns(UserWarning, match="rho"):
            find_singleton(g, params, SolverConfig(dt=1e-3, t_end=0.05), [SpectralField.zeros(grid)])


def test_diagnostics_csv(tmp_path, grid, params):
    g = taylor_green(grid, 0.2)
    m0 = random_divfree_field(grid, 3.0, seed=1)
    _, rec = integrate(m0, g, params, SolverConfig(dt=1e-3, t_end=0.1, monitor_stride=10))
    f = tmp_path / "d.csv"
    write_diagnostics_csv(rec, params, f)
    rows = list(csv.reader(f.open()))
    assert rows[0] == ["t", "l2", "v", "a_l4", "energy_residual"]
    assert len(rows) == 1 + len(rec.times)
    assert rows[1][4] == "nan" and float(rows[2][1]) == rec.l2_norm[1]
