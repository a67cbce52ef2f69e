"""Constitutive operators of the projected third-grade fluid equations.

    d m/dt + nu A m + B(m) + alpha J(m) + beta K(m) = P g

with A the Stokes operator, B(m) = P (m.grad) m, J(m) = -P div(A(m)^2) and
K(m) = -P div(|A(m)|^2 A(m)), where A(m) is the symmetric gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .field import (
    GridSpec,
    SpectralField,
    inner,
    leray_project,
    norm,
    random_divfree_field,
    sym_grad,
)

__all__ = [
    "ParameterError",
    "FluidParams",
    "op_stokes",
    "trilinear_b",
    "apply_convection",
    "apply_J",
    "apply_K",
    "apply_G",
    "nonlinear_terms",
    "monotonicity_gap",
    "MonotonicityGap",
    "md_ratio",
    "estimate_md",
    "compute_rho",
    "dissipation_bound",
]


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class FluidParams:
    nu: float = 1.0
    alpha: float = 0.0
    beta: float = 1.0
    lam: float = 1.0
    d: int = 2
    md_estimate: float | None = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ParameterError(f"viscosity nu must be positive, got {self.nu}")
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if not self.lam > 0:
            raise ParameterError(f"Poincare constant must be positive, got {self.lam}")
        if self.d not in (2, 3):
            raise ParameterError(f"d must be 2 or 3, got {self.d}")
        bound = math.sqrt(2 * self.nu * self.beta)
        if not abs(self.alpha) < bound:
            raise ParameterError(
                f"material moduli violate |alpha| < sqrt(2 nu beta): "
                f"|alpha| = {abs(self.alpha):g}, sqrt(2 nu beta) = {bound:g}"
            )

    @property
    def eps0(self) -> float:
        return 1.0 - math.sqrt(self.alpha**2 / (2 * self.beta * self.nu))

    @property
    def nu_star(self) -> float:
        return self.nu if self.d == 2 else 0.5 * self.nu * (1 + self.eps0)

    @property
    def beta_star(self) -> float:
        return self.beta if self.d == 2 else self.beta * self.eps0

    def with_md(self, md: float) -> FluidParams:
        return replace(self, md_estimate=float(md))

    def require_md(self) -> float:
        if self.md_estimate is None:
            raise ParameterError("no Sobolev-Korn constant estimate attached; call estimate_md")
        return self.md_estimate


def op_stokes(m: SpectralField) -> SpectralField:
    return SpectralField(m.grid, m.grid.k2 * m.coeffs)


def trilinear_b(p: SpectralField, m: SpectralField, u: SpectralField) -> float:
    """b(p, m, u) = int (p.grad) m . u dx."""
    grid = p.grid
    P = p.physical()
    U = u.physical()
    G = m.gradient()  # G[j, i] = d_i m_j
    integrand = np.einsum("i...,ji...,j...->...", P, G, U)
    return grid.integrate(integrand)


def _div_project(grid: GridSpec, S: np.ndarray) -> np.ndarray:
    """Coefficients of P div(S) for a padded-grid 2x2 tensor S[i, j]."""
    KX, KY = grid.wavenumbers
    Sh = grid.to_spectral(S)
    raw = 1j * (KX * Sh[:, 0] + KY * Sh[:, 1])
    return leray_project(grid, raw).coeffs


def apply_convection(m: SpectralField) -> SpectralField:
    """B(m) = P (m.grad) m, assembled in advective form."""
    grid = m.grid
    U = m.physical()
    G = m.gradient()
    adv = np.einsum("i...,ji...->j...", U, G)
    return leray_project(grid, grid.to_spectral(adv))


def apply_J(m: SpectralField) -> SpectralField:
    A = sym_grad(m)
    S = A.matmul(A).entries
    return SpectralField(m.grid, -_div_project(m.grid, S))


def apply_K(m: SpectralField) -> SpectralField:
    A = sym_grad(m)
    S = A.frob2() * A.entries
    return SpectralField(m.grid, -_div_project(m.grid, S))


def apply_G(m: SpectralField, params: FluidParams) -> SpectralField:
    return (
        params.nu * op_stokes(m)
        + apply_convection(m)
        + params.alpha * apply_J(m)
        + params.beta * apply_K(m)
    )


def nonlinear_terms(grid: GridSpec, c: np.ndarray, alpha: float, beta: float):
    """Fused B(m) + alpha J(m) + beta K(m) for coefficients ``c``.

    Uses the single symmetric flux m (x) m - alpha A^2 - beta |A|^2 A, valid
    because m is pointwise divergence free.  Returns the coefficients and
    max |A(m)|^2 over the padded grid.
    """
    KX, KY = grid.wavenumbers
    stack = np.stack([c[0], c[1], 1j * KX * c[0], 1j * KY * c[0], 1j * KX * c[1]])
    u, v, ux, uy, vx = grid.to_physical(stack)
    vy = -ux
    a11, a12, a22 = 2 * ux, uy + vx, 2 * vy
    s2 = a11 * a11 + 2 * a12 * a12 + a22 * a22
    # (A^2)_ij for symmetric A
    q11 = a11 * a11 + a12 * a12
    q12 = a12 * (a11 + a22)
    q22 = a12 * a12 + a22 * a22
    f11 = u * u - alpha * q11 - beta * s2 * a11
    f12 = u * v - alpha * q12 - beta * s2 * a12
    f22 = v * v - alpha * q22 - beta * s2 * a22
    F = grid.to_spectral(np.stack([f11, f12, f22]))
    raw = np.stack([1j * (KX * F[0] + KY * F[1]), 1j * (KX * F[1] + KY * F[2])])
    out = np.einsum("ij...,j...->i...", grid.projector, raw)
    return out, float(s2.max())


@dataclass(frozen=True)
class MonotonicityGap:
    lhs: float
    rhs_l2: float
    rhs_l4: float
    slack: float
    scale: float


def monotonicity_gap(m1: SpectralField, m2: SpectralField, params: FluidParams) -> MonotonicityGap:
    """Both sides of the local monotonicity inequality for G.

    lhs = <G(m1) - G(m2), w> + M^2/(4 nu eps0) ||A(m2)||_4^2 ||w||_2^2,
    rhs = nu eps0/4 ||A(w)||_2^2 + beta eps0/4 ||A(w)||_4^4,  w = m1 - m2.
    ``scale`` is the sum of the magnitudes of the individual pairings, the
    natural size for roundoff in ``slack``.
    """
    eps0 = params.eps0
    if not eps0 > 0:
        raise ParameterError(f"eps0 must be positive, got {eps0}")
    md = params.require_md()
    w = m1 - m2
    Gw = apply_G(m1, params) - apply_G(m2, params)
    pairing = inner(Gw, w)
    a2_4 = norm(sym_grad(m2), "L4")
    Aw = sym_grad(w)
    aw2, aw4 = norm(Aw, "L2"), norm(Aw, "L4")
    damping = md**2 / (4 * params.nu * eps0) * a2_4**2 * norm(w, "L2") ** 2
    lhs = pairing + damping
    rhs_l2 = params.nu * eps0 / 4 * aw2**2
    rhs_l4 = params.beta * eps0 / 4 * aw4**4
    a1_4 = norm(sym_grad(m1), "L4")
    scale = (
        params.nu * aw2**2
        + params.beta * (a1_4**3 + a2_4**3) * aw4
        + abs(params.alpha) * (a1_4**2 + a2_4**2) * aw4
        + (norm(m1, "L4") + norm(m2, "L4")) * norm(w, "L4") * aw4
        + damping
    )
    return MonotonicityGap(lhs, rhs_l2, rhs_l4, lhs - rhs_l2 - rhs_l4, scale)


def md_ratio(m: SpectralField) -> float:
    """||m||_inf / ||A(m)||_4 (zero-homogeneous)."""
    a = norm(sym_grad(m), "L4")
    return norm(m, "Linf") / a if a > 0 else 0.0


def estimate_md(grid: GridSpec, trials: int = 200, seed: int = 0, safety: float = 1.5) -> float:
    """Empirical Sobolev-Korn constant: running max of md_ratio times ``safety``.

    Trial i draws from its own stream (seed, i), so more trials only extend
    the sample and the estimate is non-decreasing in ``trials``.
    """
    if trials < 100:
        raise ValueError("estimate_md needs at least 100 trials")
    best = 0.0
    kcap = grid.n // 2 - 1
    for i in range(trials):
        rng = np.random.default_rng([seed, i])
        expo = rng.uniform(1.5, 5.0)
        kmax = int(rng.integers(1, kcap + 1))
        m = random_divfree_field(grid, expo, seed=int(rng.integers(2**31)), kmax=kmax)
        best = max(best, md_ratio(m))
    return safety * best


def dissipation_bound(params: FluidParams, g_hm1: float) -> float:
    """(1/(beta* nu*))^(1/2) (1/2 + 1/(nu* lambda))^(1/2) ||g||_{H^-1}."""
    ns, bs = params.nu_star, params.beta_star
    return math.sqrt(1 / (bs * ns)) * math.sqrt(0.5 + 1 / (ns * params.lam)) * g_hm1


def compute_rho(params: FluidParams, g: SpectralField | float) -> float:
    """Smallness margin nu eps0 lambda - M^2/(2 nu eps0) * dissipation_bound."""
    g_hm1 = g if isinstance(g, (int, float)) else norm(g, "Hminus1")
    md = params.require_md()
    eps0 = params.eps0
    return params.nu * eps0 * params.lam - md**2 / (2 * params.nu * eps0) * dissipation_bound(params, g_hm1)
