"""Band-limited Wiener paths, the exact Ornstein-Uhlenbeck driver and path shifts.

Noise acts on the driven modes k = k0 (a, b) with 0 < |k| <= k_cut, one per
conjugate pair (b > 0, or b = 0 and a > 0).  A divergence-free Gaussian
vector at wavevector k is a complex multiple of e_perp(k) = (-b, a)/|(a, b)|,
so each driven mode carries one complex scalar whose real and imaginary
parts are independent with variance sigma_k^2 dt per step of length dt.

Paths live on a window [t_start, t_start + N dt] of the global time grid
(t_start = start_index * dt).  The increment of step j covers
[t_j, t_{j+1}].  Random numbers are drawn in blocks counted backwards from
t = 0, so a longer horizon only prepends increments and leaves the ones
near 0 unchanged.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .field import GridSpec, SpectralField, hermitian_fix, norm

__all__ = [
    "NoiseSpec",
    "WienerPath",
    "OUState",
    "TemperedCheck",
    "driven_modes",
    "sample_wiener_path",
    "shift_path",
    "ou_rates",
    "ou_stationary",
    "ou_zero",
    "ou_step",
    "ou_mode_values",
    "noise_field",
    "ou_tempered_check",
    "save_path",
    "load_path",
]

PATH_MAGIC = b"TGFW"
BLOCK = 1024
_PATH_TAG = 0x57_49_45_4E
_INIT_TAG = 0x4F_55_49_4E


@dataclass(frozen=True)
class NoiseSpec:
    sigma0: float = 0.1
    decay_s: float = 3.0
    k_cut: float = 4.0
    varsigma: float = 0.2
    master_seed: int = 0

    def __post_init__(self):
        if not self.sigma0 >= 0:
            raise ValueError(f"sigma0 must be nonnegative, got {self.sigma0}")
        if not self.decay_s >= 3:
            raise ValueError(f"decay_s must be >= 3, got {self.decay_s}")
        if not self.k_cut > 0:
            raise ValueError(f"k_cut must be positive, got {self.k_cut}")
        if not 0 < self.varsigma <= 1:
            raise ValueError(f"varsigma must lie in (0, 1], got {self.varsigma}")
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")

    def sigma(self, k: np.ndarray) -> np.ndarray:
        return self.sigma0 * np.asarray(k, dtype=float) ** (-self.decay_s)


def driven_modes(spec: NoiseSpec, L: float = 2 * math.pi) -> np.ndarray:
    """Integer half-plane modes (a, b) with 0 < k0 |(a, b)| <= k_cut, ordered by (|k|^2, a, b)."""
    k0 = 2 * math.pi / L
    r = int(math.floor(spec.k_cut / k0))
    out = [
        (a, b)
        for a in range(-r, r + 1)
        for b in range(0, r + 1)
        if (b > 0 or a > 0) and 0 < k0 * math.hypot(a, b) <= spec.k_cut
    ]
    out.sort(key=lambda ab: (ab[0] ** 2 + ab[1] ** 2, ab[0], ab[1]))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class WienerPath:
    spec: NoiseSpec
    L: float
    dt: float
    start_index: int
    modes: np.ndarray  # (M, 2) integer wavenumbers
    sigma: np.ndarray  # (M,)
    dB: np.ndarray  # (N, M) complex increments, variance sigma^2 dt per part
    xi: np.ndarray  # (N, M) complex standard normals for the OU convolution
    stream: int = 0

    @property
    def n_steps(self) -> int:
        return self.dB.shape[0]

    @property
    def t_start(self) -> float:
        return self.start_index * self.dt

    @property
    def t_end(self) -> float:
        return (self.start_index + self.n_steps) * self.dt

    @property
    def times(self) -> np.ndarray:
        return (self.start_index + np.arange(self.n_steps + 1)) * self.dt

    @property
    def kmag(self) -> np.ndarray:
        return (2 * math.pi / self.L) * np.hypot(self.modes[:, 0], self.modes[:, 1])

    def index_of(self, t: float) -> int:
        """Step index j with t_j = t; raises if t is not a grid time of the window."""
        r = t / self.dt - self.start_index
        j = int(round(r))
        if abs(r - j) > 1e-9 * max(1.0, abs(r)) or not 0 <= j <= self.n_steps:
            raise ValueError(f"time {t!r} is not on the path grid (dt = {self.dt!r})")
        return j

    def window(self, t0: float, t1: float) -> WienerPath:
        """Restriction to [t0, t1]."""
        i0, i1 = self.index_of(t0), self.index_of(t1)
        if i1 < i0:
            raise ValueError("need t1 >= t0")
        return replace(self, start_index=self.start_index + i0, dB=self.dB[i0:i1], xi=self.xi[i0:i1])

    def values(self) -> np.ndarray:
        """W(t_j) per mode, anchored so that W(0) = 0."""
        j0 = self.index_of(0.0)
        cum = np.concatenate([np.zeros((1, self.dB.shape[1]), complex), np.cumsum(self.dB, axis=0)])
        return cum - cum[j0]

    def coarsen(self, factor: int, nu: float) -> WienerPath:
        """The same path sampled with step factor * dt.

        Brownian increments are summed; the OU convolution increment for rate
        mu_k = nu |k|^2 + 1 is recombined exactly and re-expressed through
        new standard normals, so the exact OU update on the coarse path
        reproduces the fine-path OU process at the shared times.
        """
        if factor < 1 or self.n_steps % factor or self.start_index % factor:
            raise ValueError(f"cannot coarsen {self.n_steps} steps from index {self.start_index} by {factor}")
        if factor == 1:
            return self
        mu = ou_rates(self.kmag, nu)
        h, H = self.dt, factor * self.dt
        conv = _ou_increment(self.dB, self.xi, self.sigma, mu, h)
        N = self.n_steps // factor
        conv = conv.reshape(N, factor, -1)
        decay = np.exp(-mu[None, :] * h * (factor - 1 - np.arange(factor))[:, None])
        conv_c = np.einsum("nfm,fm->nm", conv, decay)
        dB_c = self.dB.reshape(N, factor, -1).sum(axis=1)
        a, s = _ou_coefficients(self.sigma, mu, H)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi_c = np.where(s > 0, (conv_c - a * dB_c) / s, 0.0)
        return replace(self, dt=H, start_index=self.start_index // factor, dB=dB_c, xi=xi_c)


def _block_normals(seed: int, stream: int, block: int, M: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _PATH_TAG, stream, block]))
    return rng.standard_normal((BLOCK, M, 4))


def sample_wiener_path(
    spec: NoiseSpec, T: float, dt: float, stream: int = 0, L: float = 2 * math.pi
) -> WienerPath:
    """Path on [-T, 0]; reproducible from (master_seed, stream, dt)."""
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    N = int(round(T / dt))
    if abs(N * dt - T) > 1e-9 * T:
        raise ValueError(f"T = {T!r} is not a multiple of dt = {dt!r}")
    modes = driven_modes(spec, L)
    kmag = (2 * math.pi / L) * np.hypot(modes[:, 0], modes[:, 1])
    sigma = spec.sigma(kmag)
    M = len(modes)
    nb = -(-N // BLOCK)
    # backward step r covers [-(r + 1) dt, -r dt]
    back = np.concatenate([_block_normals(spec.master_seed, stream, b, M) for b in range(nb)])[:N]
    z = back[::-1]
    dB = (z[..., 0] + 1j * z[..., 1]) * (sigma * math.sqrt(dt))
    xi = z[..., 2] + 1j * z[..., 3]
    return WienerPath(spec, L, dt, -N, modes, sigma, dB, np.ascontiguousarray(xi), stream)


def shift_path(path: WienerPath, t: float) -> WienerPath:
    """theta_t: the path tau -> W(tau + t) - W(t), defined on the window shifted by -t."""
    r = t / path.dt
    j = int(round(r))
    if abs(r - j) > 1e-9 * max(1.0, abs(r)):
        raise ValueError(f"shift {t!r} is not a multiple of dt = {path.dt!r}")
    return replace(path, start_index=path.start_index - j)


# --- Ornstein-Uhlenbeck driver -------------------------------------------


def ou_rates(k: np.ndarray, nu: float) -> np.ndarray:
    return nu * np.asarray(k, dtype=float) ** 2 + 1.0


def _ou_coefficients(sigma: np.ndarray, mu: np.ndarray, h: float):
    """Regression coefficient of the OU increment on dB and the residual std."""
    var_b = sigma**2 * h
    var_i = sigma**2 * (-np.expm1(-2 * mu * h)) / (2 * mu)
    cov = sigma**2 * (-np.expm1(-mu * h)) / mu
    a = -np.expm1(-mu * h) / (mu * h)
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = np.where(var_b > 0, var_i - cov**2 / np.where(var_b > 0, var_b, 1.0), 0.0)
    return a, np.sqrt(np.maximum(resid, 0.0))


def _ou_increment(dB, xi, sigma, mu, h):
    a, s = _ou_coefficients(sigma, mu, h)
    return a * dB + s * xi


@dataclass(frozen=True, eq=False)
class _ModeMap:
    ix: np.ndarray
    iy: np.ndarray
    eperp: np.ndarray  # (2, M)
    mu_grid: np.ndarray
    decay_cache: dict


@lru_cache(maxsize=32)
def _mode_map(grid: GridSpec, modes_key: bytes, nu: float) -> _ModeMap:
    modes = np.frombuffer(modes_key, dtype=np.int64).reshape(-1, 2)
    a, b = modes[:, 0], modes[:, 1]
    if len(modes) and np.max(np.abs(modes)) >= grid.n // 2:
        raise ValueError(f"driven modes exceed the resolved band of n = {grid.n}")
    r = np.hypot(a, b)
    eperp = np.stack([-b / r, a / r]) if len(modes) else np.zeros((2, 0))
    mu_grid = ou_rates(np.sqrt(grid.k2), nu)
    return _ModeMap(a % grid.n, b, eperp, mu_grid, {})


@dataclass
class OUState:
    q: SpectralField
    nu: float

    @property
    def mu(self) -> np.ndarray:
        return ou_rates(np.sqrt(self.q.grid.k2), self.nu)


def _place(grid: GridSpec, mm: _ModeMap, vals: np.ndarray) -> np.ndarray:
    c = np.zeros(grid.shape, dtype=complex)
    c[:, mm.ix, mm.iy] = mm.eperp * vals
    return hermitian_fix(grid, c)


def ou_zero(grid: GridSpec, nu: float) -> OUState:
    return OUState(SpectralField.zeros(grid), nu)


def ou_stationary(grid: GridSpec, path: WienerPath, nu: float) -> OUState:
    """Stationary draw (per-part variance sigma_k^2 / (2 mu_k)) at the path's start time.

    The draw is keyed on (master_seed, stream, start index), so every
    pullback horizon of a path gets its own reproducible initial state.
    """
    key = [path.spec.master_seed, _INIT_TAG, path.stream, path.start_index & 0xFFFFFFFF, path.start_index >> 32 & 0xFFFFFFFF]
    rng = np.random.default_rng(np.random.SeedSequence(key))
    M = len(path.modes)
    z = rng.standard_normal((M, 2))
    mu = ou_rates(path.kmag, nu)
    vals = (z[:, 0] + 1j * z[:, 1]) * path.sigma / np.sqrt(2 * mu)
    mm = _mode_map(grid, path.modes.tobytes(), nu)
    return OUState(SpectralField(grid, _place(grid, mm, vals)), nu)


def ou_step(state: OUState, path: WienerPath, j: int) -> OUState:
    """Exact conditional OU update across step j of ``path``."""
    grid = state.q.grid
    mm = _mode_map(grid, path.modes.tobytes(), state.nu)
    h = path.dt
    E = mm.decay_cache.get(h)
    if E is None:
        E = mm.decay_cache[h] = np.exp(-mm.mu_grid * h) * grid.keep
    mu = ou_rates(path.kmag, state.nu)
    inc = _ou_increment(path.dB[j], path.xi[j], path.sigma, mu, h)
    return OUState(SpectralField(grid, E * state.q.coeffs + _place(grid, mm, inc)), state.nu)


def ou_mode_values(state: OUState, path: WienerPath) -> np.ndarray:
    """Scalar e_perp amplitudes of q at the driven modes."""
    grid = state.q.grid
    mm = _mode_map(grid, path.modes.tobytes(), state.nu)
    return np.einsum("im,im->m", mm.eperp, state.q.coeffs[:, mm.ix, mm.iy])


def noise_field(grid: GridSpec, path: WienerPath, j: int) -> np.ndarray:
    """Coefficients of the Brownian increment dW over step j."""
    mm = _mode_map(grid, path.modes.tobytes(), 1.0)
    return _place(grid, mm, path.dB[j])


# --- temperedness diagnostics --------------------------------------------


@dataclass(frozen=True)
class TemperedCheck:
    sup_ratio: float
    integral: float
    T: float
    c: float


def ou_tempered_check(
    spec: NoiseSpec,
    c: float,
    T: float,
    dt: float = 0.01,
    nu: float = 1.0,
    grid: GridSpec | None = None,
    stride: int = 10,
    stream: int = 0,
) -> TemperedCheck:
    """Growth diagnostics of q along [-T, 0].

    sup_ratio = max_{t <= -T/2} ||q(t)||_2^2 e^{ct};
    integral = int_{-T}^0 (1 + ||q||_2^2 + ||q||_{W14}^4) e^{ct} dt, with the
    constant term integrated exactly and the rest by the trapezoid rule on
    every ``stride``-th step.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    grid = grid or GridSpec(32)
    path = sample_wiener_path(spec, T, dt, stream=stream, L=grid.L)
    q = ou_stationary(grid, path, nu)
    ts, l2, w14 = [], [], []
    for j in range(path.n_steps + 1):
        if j % stride == 0 or j == path.n_steps:
            ts.append(path.t_start + j * dt)
            l2.append(norm(q.q, "L2") ** 2)
            w14.append(norm(q.q, "W14") ** 4)
        if j < path.n_steps:
            q = ou_step(q, path, j)
    ts, l2, w14 = map(np.asarray, (ts, l2, w14))
    w = np.exp(c * ts)
    early = ts <= -T / 2 + 1e-12
    sup_ratio = float(np.max(l2[early] * w[early])) if early.any() else 0.0
    integral = -math.expm1(-c * T) / c + float(np.trapezoid((l2 + w14) * w, ts))
    return TemperedCheck(sup_ratio, integral, T, c)


# --- checkpoints -----------------------------------------------------------

_HEADER = struct.Struct("<4x5dqdqqqq")


def save_path(path: WienerPath, dest: str | Path) -> None:
    """TGFW: magic, spec fields, (L, dt, start, N, M, stream), modes, then dB and xi as f64 pairs."""
    s = path.spec
    with open(dest, "wb") as fh:
        fh.write(PATH_MAGIC)
        fh.write(_HEADER.pack(s.sigma0, s.decay_s, s.k_cut, s.varsigma, path.L, s.master_seed,
                              path.dt, path.start_index, path.n_steps, len(path.modes), path.stream)[4:])
        fh.write(np.ascontiguousarray(path.modes, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(path.dB, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(path.xi, dtype="<c16").tobytes())


def load_path(src: str | Path) -> WienerPath:
    data = Path(src).read_bytes()
    if data[:4] != PATH_MAGIC:
        raise ValueError(f"{src}: not a TGFW path file")
    sigma0, decay_s, k_cut, varsigma, L, seed, dt, start, N, M, stream = _HEADER.unpack_from(data, 0)
    off = _HEADER.size
    modes = np.frombuffer(data, "<i8", 2 * M, off).reshape(M, 2).astype(np.int64)
    off += 16 * M
    dB = np.frombuffer(data, "<c16", N * M, off).reshape(N, M).astype(complex)
    off += 16 * N * M
    xi = np.frombuffer(data, "<c16", N * M, off).reshape(N, M).astype(complex)
    spec = NoiseSpec(sigma0, decay_s, k_cut, varsigma, seed)
    kmag = (2 * math.pi / L) * np.hypot(modes[:, 0], modes[:, 1])
    return WienerPath(spec, L, dt, start, modes, spec.sigma(kmag), dB, xi, stream)
