"""Spectral fields on the periodic square [0, L)^2.

Velocity fields are stored as truncated Fourier-series coefficients in the
``rfft2`` half-spectrum layout, shape ``(2, n, n//2 + 1)``: axis 0 is the
velocity component, axis 1 the x-wavenumber (FFT order), axis 2 the
non-negative y-wavenumbers.  Physical arrays are indexed ``f[ix, iy]``.

Coefficients are normalised as series coefficients,

    u(x) = sum_k  c_k exp(i k.x),

so ``c = rfft2(u) / n**2``.  Nyquist rows/columns are kept identically zero,
which leaves the retained modes |k_x|, |k_y| <= n/2 - 1 and makes every
spectral derivative of a real field real.

All nonlinear integrands are evaluated on a zero-padded grid of size
``pad * n`` (``pad >= 2``): products of up to four band-limited factors
then integrate exactly and cubic products project onto the retained
modes without aliasing.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GridSpec",
    "SpectralField",
    "TensorField",
    "leray_project",
    "sym_grad",
    "norm",
    "inner",
    "random_divfree_field",
    "taylor_green",
    "save_checkpoint",
    "load_checkpoint",
]

NORM_KINDS = ("L2", "V", "L4", "W14", "Linf", "Hminus1")
CHECKPOINT_MAGIC = b"TGF1"


@dataclass(frozen=True)
class GridSpec:
    n: int = 32
    L: float = 2 * np.pi
    dealias_rule: int = 2

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.dealias_rule < 2:
            raise ValueError("dealias_rule must be >= 2 for cubic products")

    @property
    def m(self) -> int:
        """Padded physical grid size."""
        return self.dealias_rule * self.n

    @property
    def k0(self) -> float:
        return 2 * np.pi / self.L

    @property
    def poincare(self) -> float:
        """Exact Poincare constant of mean-zero fields on this torus."""
        return self.k0**2

    @property
    def kmax(self) -> float:
        return (self.n // 2 - 1) * self.k0

    @property
    def shape(self) -> tuple[int, int, int]:
        return (2, self.n, self.n // 2 + 1)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        kx = np.fft.fftfreq(self.n, 1.0 / self.n) * self.k0
        ky = np.fft.rfftfreq(self.n, 1.0 / self.n) * self.k0
        KX, KY = np.meshgrid(kx, ky, indexing="ij")
        return KX, KY

    @cached_property
    def k2(self) -> np.ndarray:
        KX, KY = self.wavenumbers
        return KX**2 + KY**2

    @cached_property
    def inv_k2(self) -> np.ndarray:
        out = np.zeros_like(self.k2)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return out

    @cached_property
    def keep(self) -> np.ndarray:
        """Mask of retained modes (no Nyquist, no mean)."""
        h = self.n // 2
        mask = np.ones((self.n, h + 1), dtype=bool)
        mask[h, :] = False
        mask[:, h] = False
        mask[0, 0] = False
        return mask

    @cached_property
    def weights(self) -> np.ndarray:
        """Parseval multiplicities of the half spectrum."""
        w = np.full((self.n, self.n // 2 + 1), 2.0)
        w[:, 0] = 1.0
        return w * self.keep

    @cached_property
    def projector(self) -> np.ndarray:
        """Per-mode Leray matrix I - k k^T/|k|^2, shape (2, 2, n, n//2+1)."""
        KX, KY = self.wavenumbers
        ik2 = self.inv_k2
        P = np.empty((2, 2) + KX.shape)
        P[0, 0] = 1.0 - KX * KX * ik2
        P[0, 1] = -KX * KY * ik2
        P[1, 0] = P[0, 1]
        P[1, 1] = 1.0 - KY * KY * ik2
        return P * self.keep

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded physical grid coordinates (X, Y), indexed [ix, iy]."""
        x = np.arange(self.m) * (self.L / self.m)
        return np.meshgrid(x, x, indexing="ij")

    def pad(self, c: np.ndarray) -> np.ndarray:
        """Embed half-spectrum coefficients into the padded spectrum."""
        m, h = self.m, self.n // 2
        out = np.zeros(c.shape[:-2] + (m, m // 2 + 1), dtype=complex)
        out[..., :h, :h] = c[..., :h, :h]
        out[..., m - h + 1:, :h] = c[..., h + 1:, :h]
        return out

    def truncate(self, c: np.ndarray) -> np.ndarray:
        n, m, h = self.n, self.m, self.n // 2
        out = np.zeros(c.shape[:-2] + (n, h + 1), dtype=complex)
        out[..., :h, :h] = c[..., :h, :h]
        out[..., h + 1:, :h] = c[..., m - h + 1:, :h]
        return out

    def to_physical(self, c: np.ndarray) -> np.ndarray:
        """Padded-grid samples of the fields with coefficients ``c``."""
        m = self.m
        return sfft.irfft2(self.pad(c), s=(m, m), norm="forward")

    def to_spectral(self, f: np.ndarray) -> np.ndarray:
        """Retained-mode coefficients of padded-grid samples ``f``."""
        c = self.truncate(sfft.rfft2(f, norm="forward"))
        c *= self.keep
        return c

    def mean(self, f: np.ndarray) -> float:
        """Exact integral of a padded-grid integrand divided by the area."""
        return float(np.mean(f))

    def integrate(self, f: np.ndarray) -> float:
        return self.L**2 * float(np.mean(f))


@dataclass
class SpectralField:
    """Mean-zero, divergence-free, real vector field on the torus."""

    grid: GridSpec
    coeffs: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} does not match grid {self.grid.shape}"
            )

    @classmethod
    def zeros(cls, grid: GridSpec) -> SpectralField:
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_physical(cls, grid: GridSpec, u: np.ndarray) -> SpectralField:
        """Project padded-grid samples of a 2-vector field onto the retained modes.

        The result is Leray projected, so any gradient part is discarded.
        """
        u = np.asarray(u, dtype=float)
        if u.shape != (2, grid.m, grid.m):
            raise ValueError(f"expected samples of shape (2, {grid.m}, {grid.m})")
        return leray_project(grid, grid.to_spectral(u))

    def physical(self) -> np.ndarray:
        return self.grid.to_physical(self.coeffs)

    def gradient(self) -> np.ndarray:
        """Padded-grid samples of G[i, j] = d_j u_i."""
        KX, KY = self.grid.wavenumbers
        c = self.coeffs
        d = np.stack([1j * KX * c, 1j * KY * c], axis=1)
        return self.grid.to_physical(d)

    def divergence_error(self) -> float:
        """max |k . c_k| relative to max |k| |c_k|."""
        KX, KY = self.grid.wavenumbers
        c = self.coeffs
        div = np.abs(KX * c[0] + KY * c[1]).max()
        scale = (np.sqrt(self.grid.k2) * np.abs(c).max(axis=0)).max()
        return float(div / scale) if scale > 0 else 0.0

    def copy(self) -> SpectralField:
        return SpectralField(self.grid, self.coeffs.copy())

    def _check(self, other: SpectralField):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other: SpectralField) -> SpectralField:
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: SpectralField) -> SpectralField:
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self) -> SpectralField:
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, a: float) -> SpectralField:
        return SpectralField(self.grid, a * self.coeffs)

    __rmul__ = __mul__


@dataclass
class TensorField:
    """2x2 matrix field sampled on the padded grid, entries[i, j, ix, iy]."""

    grid: GridSpec
    entries: np.ndarray = dc_field(repr=False)

    def frob2(self) -> np.ndarray:
        """Pointwise |T|^2 = T:T."""
        return np.einsum("ij...,ij...->...", self.entries, self.entries)

    def trace(self) -> np.ndarray:
        return self.entries[0, 0] + self.entries[1, 1]

    def matmul(self, other: TensorField) -> TensorField:
        return TensorField(self.grid, np.einsum("ik...,kj...->ij...", self.entries, other.entries))


def leray_project(grid: GridSpec, raw: np.ndarray) -> SpectralField:
    """Apply I - k k^T/|k|^2 mode by mode; also removes the mean and Nyquist modes."""
    raw = np.asarray(raw, dtype=complex)
    P = grid.projector
    out = np.einsum("ij...,j...->i...", P, raw)
    return SpectralField(grid, out)


def sym_grad(m: SpectralField) -> TensorField:
    """A(m) = grad m + (grad m)^T on the padded grid."""
    G = m.gradient()
    return TensorField(m.grid, G + G.transpose(1, 0, 2, 3))


def inner(f: SpectralField, g: SpectralField) -> float:
    """L^2 pairing via Parseval."""
    f._check(g)
    w = f.grid.weights
    s = np.sum(w * (f.coeffs * g.coeffs.conj()).real)
    return float(f.grid.L**2 * s)


def _spectral_sq(m: SpectralField, mult: np.ndarray | None = None) -> float:
    a = np.abs(m.coeffs) ** 2
    if mult is not None:
        a = a * mult
    return float(m.grid.L**2 * np.sum(m.grid.weights * a))


def norm(x: SpectralField | TensorField, kind: str = "L2") -> float:
    """Norms used by the energy estimates.

    L2, V (= ||grad u||_2) and Hminus1 are Parseval-exact.  L4 and W14 use
    exact quadrature on the padded grid.  Linf is the maximum over the padded
    grid, hence a lower bound of the true supremum.
    """
    if kind not in NORM_KINDS:
        raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
    grid = x.grid
    if isinstance(x, TensorField):
        if kind == "Hminus1":
            raise TypeError("Hminus1 is defined for mean-zero vector fields only")
        s2 = x.frob2()
        if kind == "L2":
            return float(np.sqrt(grid.integrate(s2)))
        if kind == "L4":
            return float(grid.integrate(s2**2) ** 0.25)
        if kind == "Linf":
            return float(np.sqrt(s2.max()))
        raise ValueError(f"norm {kind!r} is not defined for tensor fields")
    if kind == "L2":
        return float(np.sqrt(_spectral_sq(x)))
    if kind == "V":
        return float(np.sqrt(_spectral_sq(x, grid.k2)))
    if kind == "Hminus1":
        return float(np.sqrt(_spectral_sq(x, grid.inv_k2)))
    u = x.physical()
    u2 = u[0] ** 2 + u[1] ** 2
    if kind == "Linf":
        return float(np.sqrt(u2.max()))
    if kind == "L4":
        return float(grid.integrate(u2**2) ** 0.25)
    G = x.gradient()
    g2 = np.einsum("ij...,ij...->...", G, G)
    return float((grid.integrate(u2**2) + grid.integrate(g2**2)) ** 0.25)


def _ring_order(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Independent half-spectrum modes sorted by ring max(|kx|, |ky|).

    The ordering of low modes does not depend on n, so a given seed yields
    the same large scales on every grid.
    """
    n, h = grid.n, grid.n // 2
    kx = np.fft.fftfreq(n, 1.0 / n).astype(int)
    ky = np.arange(h + 1)
    IX, IY = np.meshgrid(np.arange(n), ky, indexing="ij")
    KXi, KYi = kx[IX], ky[IY]
    sel = grid.keep & ~((KYi == 0) & (KXi < 0))
    ix, iy = IX[sel], IY[sel]
    kxs, kys = KXi[sel], KYi[sel]
    ring = np.maximum(np.abs(kxs), kys)
    order = np.lexsort((kys, kxs, ring))
    return ix[order], iy[order]


def hermitian_fix(grid: GridSpec, c: np.ndarray) -> np.ndarray:
    """Enforce c(-kx, 0) = conj(c(kx, 0)) on the ky = 0 column."""
    n, h = grid.n, grid.n // 2
    c = c.copy()
    pos = np.arange(1, h)
    c[..., n - pos, 0] = np.conj(c[..., pos, 0])
    return c * grid.keep


def random_divfree_field(
    grid: GridSpec,
    energy_spectrum_exponent: float = 3.0,
    seed: int = 0,
    l2: float | None = None,
    kmax: float | None = None,
) -> SpectralField:
    """Random field with mode amplitudes ~ |k|^(-exponent).

    ``l2`` rescales the result to that L^2 norm; ``kmax`` band-limits it.
    """
    if energy_spectrum_exponent <= 1:
        raise ValueError("energy_spectrum_exponent must exceed 1")
    rng = np.random.default_rng(seed)
    ix, iy = _ring_order(grid)
    draws = rng.standard_normal((ix.size, 4))
    raw = np.zeros(grid.shape, dtype=complex)
    raw[0, ix, iy] = draws[:, 0] + 1j * draws[:, 1]
    raw[1, ix, iy] = draws[:, 2] + 1j * draws[:, 3]
    k = np.sqrt(grid.k2) / grid.k0
    amp = np.zeros_like(k)
    amp[k > 0] = k[k > 0] ** (-energy_spectrum_exponent)
    if kmax is not None:
        amp[k > kmax] = 0.0
    raw = hermitian_fix(grid, raw * amp)
    m = leray_project(grid, raw)
    if l2 is not None:
        s = norm(m, "L2")
        if s > 0:
            m = m * (l2 / s)
    return m


def taylor_green(grid: GridSpec, amplitude: float = 1.0) -> SpectralField:
    """amplitude * (sin x cos y, -cos x sin y) in units of the lowest wavenumber."""
    X, Y = grid.coords
    k = grid.k0
    u = np.stack([np.sin(k * X) * np.cos(k * Y), -np.cos(k * X) * np.sin(k * Y)])
    return SpectralField.from_physical(grid, amplitude * u)


def save_checkpoint(m: SpectralField, path: str | Path) -> None:
    """Write the TGF1 binary format (little endian)."""
    g = m.grid
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Id", g.n, g.L))
        fh.write(np.ascontiguousarray(m.coeffs, dtype="<c16").tobytes())


def load_checkpoint(path: str | Path, dealias_rule: int = 2) -> SpectralField:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a TGF1 checkpoint")
    n, L = struct.unpack_from("<Id", data, 4)
    grid = GridSpec(n=n, L=L, dealias_rule=dealias_rule)
    count = 2 * n * (n // 2 + 1)
    c = np.frombuffer(data, dtype="<c16", count=count, offset=16)
    return SpectralField(grid, c.reshape(grid.shape).astype(complex))
