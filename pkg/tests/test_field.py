import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tgflab.field import (
    GridSpec,
    SpectralField,
    TensorField,
    inner,
    leray_project,
    load_checkpoint,
    norm,
    random_divfree_field,
    save_checkpoint,
    sym_grad,
    taylor_green,
)

from conftest import random_fields


def sin_y(grid):
    X, Y = grid.coords
    return SpectralField.from_physical(grid, np.stack([np.sin(Y), np.zeros_like(Y)]))


def raw_field(grid, seed):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    from tgflab.field import hermitian_fix

    return hermitian_fix(grid, raw)


class TestGridSpec:
    def test_rejects_odd_or_small_sizes(self):
        with pytest.raises(ValueError):
            GridSpec(31)
        with pytest.raises(ValueError):
            GridSpec(6)

    def test_rejects_insufficient_padding(self):
        with pytest.raises(ValueError):
            GridSpec(32, dealias_rule=1)

    def test_padded_size_and_poincare(self):
        g = GridSpec(32, L=4 * math.pi)
        assert g.m >= 2 * g.n
        assert g.poincare == pytest.approx(0.25)

    def test_mean_and_nyquist_modes_dropped(self, grid32):
        keep = grid32.keep
        assert not keep[0, 0]
        assert not keep[grid32.n // 2].any()
        assert not keep[:, grid32.n // 2].any()


class TestLeray:
    def test_gradient_is_annihilated(self, grid32):
        X, Y = grid32.coords
        grad_cos_x = np.stack([-np.sin(X), np.zeros_like(X)])
        m = leray_project(grid32, grid32.to_spectral(grad_cos_x))
        assert np.abs(m.coeffs).max() < 1e-15

    def test_taylor_green_unchanged(self, grid32):
        X, Y = grid32.coords
        u = np.stack([np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y)])
        c = grid32.to_spectral(u)
        assert np.abs(leray_project(grid32, c).coeffs - c).max() < 1e-15

    def test_idempotent_on_100_random_fields(self, grid32):
        worst = 0.0
        for seed in range(100):
            once = leray_project(grid32, raw_field(grid32, seed))
            twice = leray_project(grid32, once.coeffs)
            worst = max(worst, np.abs(twice.coeffs - once.coeffs).max() / np.abs(once.coeffs).max())
        assert worst <= 1e-14

    def test_self_adjoint(self, grid32):
        for seed in range(10):
            f, g = raw_field(grid32, seed), raw_field(grid32, seed + 1000)
            Pf, Pg = leray_project(grid32, f), leray_project(grid32, g)
            F, G = SpectralField(grid32, f), SpectralField(grid32, g)
            lhs, rhs = inner(Pf, G), inner(F, Pg)
            assert abs(lhs - rhs) <= 1e-13 * norm(F) * norm(G)

    def test_output_invariants(self, grid32):
        m = leray_project(grid32, raw_field(grid32, 3))
        assert m.coeffs[:, 0, 0].tolist() == [0, 0]
        assert m.divergence_error() <= 1e-12
        assert np.abs(m.physical().imag if np.iscomplexobj(m.physical()) else 0).max() == 0


class TestSymGrad:
    def test_shear_field(self, grid32):
        A = sym_grad(sin_y(grid32))
        X, Y = grid32.coords
        expected = np.array([[np.zeros_like(Y), np.cos(Y)], [np.cos(Y), np.zeros_like(Y)]])
        assert np.abs(A.entries - expected).max() < 1e-13

    def test_zero_field(self, grid32):
        assert np.abs(sym_grad(SpectralField.zeros(grid32)).entries).max() == 0

    def test_symmetric_and_traceless(self, grid32):
        for m in random_fields(grid32, 10):
            A = sym_grad(m)
            assert np.array_equal(A.entries[0, 1], A.entries[1, 0])
            scale = np.sqrt(A.frob2()).max()
            assert np.abs(A.trace()).max() <= 1e-12 * max(scale, 1.0)


class TestNorms:
    def test_sin_y_l2(self, grid32):
        assert norm(sin_y(grid32), "L2") == pytest.approx(math.pi * math.sqrt(2), rel=1e-14)

    def test_sin_y_hminus1_and_v(self, grid32):
        m = sin_y(grid32)
        assert norm(m, "Hminus1") == pytest.approx(math.pi * math.sqrt(2), rel=1e-14)
        assert norm(m, "V") == pytest.approx(math.pi * math.sqrt(2), rel=1e-14)

    def test_sin_y_quadrature_norms(self, grid32):
        m = sin_y(grid32)
        # int sin^4 y over the box = 2 pi * 3 pi / 4
        assert norm(m, "L4") == pytest.approx((1.5 * math.pi**2) ** 0.25, rel=1e-13)
        assert norm(m, "Linf") == pytest.approx(1.0, rel=1e-12)
        assert norm(m, "W14") == pytest.approx((3 * math.pi**2) ** 0.25, rel=1e-13)

    @pytest.mark.parametrize("kind", ["L2", "V", "L4", "W14", "Linf", "Hminus1"])
    def test_zero(self, grid32, kind):
        assert norm(SpectralField.zeros(grid32), kind) == 0.0

    def test_tensor_rejects_hminus1(self, grid32):
        with pytest.raises(TypeError):
            norm(sym_grad(sin_y(grid32)), "Hminus1")

    def test_unknown_kind(self, grid32):
        with pytest.raises(ValueError):
            norm(sin_y(grid32), "H2")

    def test_l2_matches_physical_quadrature(self, grid32):
        for m in random_fields(grid32, 5):
            u = m.physical()
            phys = math.sqrt(grid32.integrate(u[0] ** 2 + u[1] ** 2))
            assert norm(m) == pytest.approx(phys, rel=1e-13)

    def test_poincare_inequality(self, grid32):
        lam = grid32.poincare
        for m in random_fields(grid32, 50):
            assert lam * norm(m) ** 2 <= norm(m, "V") ** 2 * (1 + 1e-14)
        m = sin_y(grid32)
        assert lam * norm(m) ** 2 == pytest.approx(norm(m, "V") ** 2, rel=1e-14)

    def test_sobolev_korn_chain(self, grid32, md32):
        for m in random_fields(grid32, 50, seed=5):
            assert norm(m, "Linf") <= md32 * norm(sym_grad(m), "L4")


class TestRandomFields:
    def test_same_seed_bitwise(self, grid32):
        a = random_divfree_field(grid32, 3.0, seed=11)
        b = random_divfree_field(grid32, 3.0, seed=11)
        assert np.array_equal(a.coeffs, b.coeffs)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), expo=st.floats(1.1, 6.0))
    def test_divergence_free(self, seed, expo):
        m = random_divfree_field(GridSpec(16), expo, seed=seed)
        assert m.divergence_error() <= 1e-12
        assert np.all(m.coeffs[:, 0, 0] == 0)

    def test_rejects_flat_spectrum(self, grid32):
        with pytest.raises(ValueError):
            random_divfree_field(grid32, 1.0)

    def test_w14_grid_refinement(self):
        a = norm(random_divfree_field(GridSpec(32), 3.0, seed=0), "W14")
        b = norm(random_divfree_field(GridSpec(64), 3.0, seed=0), "W14")
        assert abs(a - b) / b < 0.01


class TestArithmetic:
    def test_grid_mismatch(self, grid32, grid16):
        with pytest.raises(ValueError):
            SpectralField.zeros(grid32) + SpectralField.zeros(grid16)

    def test_shape_mismatch(self, grid32):
        with pytest.raises(ValueError):
            SpectralField(grid32, np.zeros((2, 4, 3)))

    def test_taylor_green_amplitude(self, grid32):
        tg = taylor_green(grid32, 0.5)
        assert norm(tg) == pytest.approx(0.5 * math.pi * math.sqrt(2), rel=1e-13)


def test_checkpoint_roundtrip(tmp_path, grid32):
    m = random_divfree_field(grid32, 2.5, seed=4)
    f = tmp_path / "m.tgf"
    save_checkpoint(m, f)
    data = f.read_bytes()
    assert data[:4] == b"TGF1"
    assert len(data) == 16 + 2 * 32 * 17 * 16
    back = load_checkpoint(f)
    assert back.grid == grid32
    assert np.array_equal(back.coeffs, m.coeffs)


def test_checkpoint_bad_magic(tmp_path):
    f = tmp_path / "x.tgf"
    f.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(ValueError):
        load_checkpoint(f)


def test_tensor_matmul_identity(grid32):
    A = sym_grad(random_divfree_field(grid32, 3.0, seed=1))
    eye = np.zeros_like(A.entries)
    eye[0, 0] = eye[1, 1] = 1.0
    I = TensorField(grid32, eye)
    assert np.array_equal(A.matmul(I).entries, A.entries)
