"""Deterministic time integration, energy monitors and the singleton finder."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from itertools import combinations
from pathlib import Path

import numpy as np

from .field import GridSpec, SpectralField, inner, leray_project, norm, sym_grad
from .operators import FluidParams, compute_rho, nonlinear_terms

__all__ = [
    "BlowUpError",
    "SolverConfig",
    "TrajectoryRecord",
    "ExpIntegrator",
    "step_det",
    "integrate",
    "energy_residual",
    "energy_residual_series",
    "energy_identity_defect",
    "absorbing_entry_time",
    "time_averaged_dissipation",
    "ContractionResult",
    "contraction_check",
    "contraction_windows",
    "SingletonResult",
    "find_singleton",
    "write_diagnostics_csv",
]


class BlowUpError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    t_end: float = 20.0
    monitor_stride: int = 10
    steady_tol: float = 1e-8
    cfl: float = 0.1
    stiff_cfl: float = 1.0
    max_halvings: int = 12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.steady_tol > 0:
            raise ValueError("steady_tol must be positive")
        if self.monitor_stride < 1:
            raise ValueError("monitor_stride must be >= 1")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))


class ExpIntegrator:
    """Exponential Euler for the linear part nu * |k|^2.

    c_new = E c + phi * F with E = exp(-nu |k|^2 dt) and
    phi = (1 - E) / (nu |k|^2), exact for constant F.
    """

    def __init__(self, grid: GridSpec, nu: float, dt: float):
        self.grid, self.nu, self.dt = grid, nu, dt
        L = nu * grid.k2
        self.E = np.exp(-L * dt) * grid.keep
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.where(L > 0, -np.expm1(-L * dt) / L, dt)
        self.phi = phi * grid.keep


@lru_cache(maxsize=64)
def _integrator(grid: GridSpec, nu: float, dt: float) -> ExpIntegrator:
    return ExpIntegrator(grid, nu, dt)


def _stable(dt: float, amax2: float, params: FluidParams, grid: GridSpec, config: SolverConfig) -> bool:
    # explicit cubic term: spec'd amplitude limit plus a diffusive limit at k_max
    if dt * params.beta * amax2 > config.cfl:
        return False
    eff = 3 * params.beta * amax2 + abs(params.alpha) * math.sqrt(amax2)
    return dt * eff * grid.kmax**2 <= config.stiff_cfl


def advance(
    c: np.ndarray,
    forcing: np.ndarray,
    params: FluidParams,
    grid: GridSpec,
    dt: float,
    config: SolverConfig,
    shift: np.ndarray | None = None,
    extra: np.ndarray | None = None,
    depth: int = 0,
) -> np.ndarray:
    """One exponential-Euler step with adaptive halving.

    Nonlinear terms are evaluated at ``c + shift`` and ``extra`` is added to
    the explicit right-hand side; both are frozen over the step.
    """
    arg = c if shift is None else c + shift
    N, amax2 = nonlinear_terms(grid, arg, params.alpha, params.beta)
    if not _stable(dt, amax2, params, grid, config):
        if depth >= config.max_halvings:
            raise BlowUpError(f"step size underflow after {depth} halvings (max|A|^2 = {amax2:.3g})")
        half = 0.5 * dt
        c = advance(c, forcing, params, grid, half, config, shift, extra, depth + 1)
        return advance(c, forcing, params, grid, half, config, shift, extra, depth + 1)
    rhs = forcing - N
    if extra is not None:
        rhs = rhs + extra
    integ = _integrator(grid, params.nu, dt)
    return integ.E * c + integ.phi * rhs


def step_det(
    m: SpectralField,
    g: SpectralField,
    params: FluidParams,
    dt: float,
    config: SolverConfig | None = None,
) -> SpectralField:
    config = config or SolverConfig(dt=dt)
    Pg = leray_project(m.grid, g.coeffs).coeffs
    c = advance(m.coeffs, Pg, params, m.grid, dt, config)
    if not np.isfinite(c).all():
        raise BlowUpError("non-finite state after one step")
    return SpectralField(m.grid, c)


@dataclass
class TrajectoryRecord:
    grid: GridSpec
    times: np.ndarray
    l2_norm: np.ndarray
    v_norm: np.ndarray
    a_l2_norm: np.ndarray
    a_l4_norm: np.ndarray
    g_pairing: np.ndarray
    g_hm1: float
    snapshots: list | None = dc_field(default=None, repr=False)
    last_states: list = dc_field(default_factory=list, repr=False)
    absorbing_entry_time: float = math.nan


@dataclass
class _Monitor:
    g: SpectralField
    keep_states: bool
    rows: list = dc_field(default_factory=list)
    states: list = dc_field(default_factory=list)
    tail: list = dc_field(default_factory=list)

    def __call__(self, t: float, m: SpectralField):
        A = sym_grad(m)
        self.rows.append(
            (t, norm(m, "L2"), norm(m, "V"), norm(A, "L2"), norm(A, "L4"), inner(self.g, m))
        )
        if self.keep_states:
            self.states.append(m.coeffs.copy())
        self.tail = (self.tail + [m.coeffs.copy()])[-2:]

    def record(self, params: FluidParams) -> TrajectoryRecord:
        arr = np.array(self.rows)
        rec = TrajectoryRecord(
            grid=self.g.grid,
            times=arr[:, 0],
            l2_norm=arr[:, 1],
            v_norm=arr[:, 2],
            a_l2_norm=arr[:, 3],
            a_l4_norm=arr[:, 4],
            g_pairing=arr[:, 5],
            g_hm1=norm(self.g, "Hminus1"),
            snapshots=self.states if self.keep_states else None,
            last_states=self.tail,
        )
        rec.absorbing_entry_time = absorbing_entry_time(rec, params)
        return rec


def integrate(
    m0: SpectralField,
    g: SpectralField,
    params: FluidParams,
    config: SolverConfig,
    keep_states: bool = False,
    t0: float = 0.0,
) -> tuple[SpectralField, TrajectoryRecord]:
    """Integrate from t0 to t0 + t_end, sampling monitors every ``monitor_stride`` steps."""
    grid = m0.grid
    Pg = leray_project(grid, g.coeffs).coeffs
    mon = _Monitor(g, keep_states)
    c = m0.coeffs.copy()
    mon(t0, m0)
    for j in range(1, config.steps + 1):
        c = advance(c, Pg, params, grid, config.dt, config)
        if j % config.monitor_stride == 0 or j == config.steps:
            if not np.isfinite(c).all():
                raise BlowUpError(f"non-finite state at step {j} (t = {t0 + j * config.dt:g})")
            mon(t0 + j * config.dt, SpectralField(grid, c))
    return SpectralField(grid, c), mon.record(params)


def energy_residual_series(rec: TrajectoryRecord, params: FluidParams) -> np.ndarray:
    """Per-interval residual of the integrated energy inequality.

    d/dt ||m||^2 + (nu*/2) ||A||_2^2 + beta* ||A||_4^4 - ||g||^2_{H^-1}/(2 nu*),
    with a forward difference for the derivative and endpoint averages for
    the dissipation terms.
    """
    ns, bs = params.nu_star, params.beta_star
    t = rec.times
    e = rec.l2_norm**2
    diss = 0.5 * ns * rec.a_l2_norm**2 + bs * rec.a_l4_norm**4
    dedt = np.diff(e) / np.diff(t)
    return dedt + 0.5 * (diss[1:] + diss[:-1]) - rec.g_hm1**2 / (2 * ns)


def energy_residual(rec: TrajectoryRecord, params: FluidParams) -> float:
    return float(np.max(energy_residual_series(rec, params)))


def energy_identity_defect(rec: TrajectoryRecord, params: FluidParams) -> np.ndarray:
    """Discrete defect of the 2D energy identity

    d/dt ||m||^2 = -nu ||A||_2^2 - beta ||A||_4^4 + 2 <g, m>,

    which isolates the time-discretisation error of the scheme.
    """
    t = rec.times
    e = rec.l2_norm**2
    src = -params.nu * rec.a_l2_norm**2 - params.beta * rec.a_l4_norm**4 + 2 * rec.g_pairing
    return np.diff(e) / np.diff(t) - 0.5 * (src[1:] + src[:-1])


def absorbing_radius(params: FluidParams, g_hm1: float, rate: float | None = None) -> float:
    """||g||^2_{H^-1} / (nu* rate), rate defaulting to nu* lambda."""
    rate = params.nu_star * params.lam if rate is None else rate
    return g_hm1**2 / (params.nu_star * rate)


def absorbing_entry_time(rec: TrajectoryRecord, params: FluidParams, hold: float = 1.0) -> float:
    """First sample time after which the absorbing bound holds for ``hold`` time units."""
    bound = absorbing_radius(params, rec.g_hm1)
    inside = rec.l2_norm**2 <= bound
    t = rec.times
    for j in range(len(t)):
        if not inside[j]:
            continue
        window = (t >= t[j]) & (t <= t[j] + hold)
        if t[-1] < t[j] + hold:
            break
        if inside[window].all():
            return float(t[j])
    return math.nan


def time_averaged_dissipation(rec: TrajectoryRecord, s: float, t: float) -> float:
    """(1/(t-s)) int_s^t ||A(m)||_4^2 by the trapezoid rule on the samples."""
    sel = (rec.times >= s - 1e-12) & (rec.times <= t + 1e-12)
    ts, a = rec.times[sel], rec.a_l4_norm[sel] ** 2
    return float(np.trapezoid(a, ts) / (ts[-1] - ts[0]))


@dataclass(frozen=True)
class ContractionResult:
    t1: float
    t2: float
    observed_ratio: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.observed_ratio <= self.bound * 1.05


def contraction_check(
    traj1: TrajectoryRecord,
    traj2: TrajectoryRecord,
    params: FluidParams,
    t1: float | None = None,
    t2: float | None = None,
) -> ContractionResult:
    """Compare the squared-distance ratio with the Gronwall bound

    exp(-nu eps0 lambda (t2 - t1) + M^2/(2 nu eps0) int ||A(m_1)||_4^2),

    where m_1 is the trajectory with the smaller A-norm integral.
    """
    if traj1.snapshots is None or traj2.snapshots is None:
        raise ValueError("contraction_check needs trajectories recorded with keep_states=True")
    if traj1.times.shape != traj2.times.shape or not np.allclose(traj1.times, traj2.times):
        raise ValueError("trajectories are sampled on different time grids")
    t = traj1.times
    t1 = t[0] if t1 is None else t1
    t2 = t[-1] if t2 is None else t2
    i1 = int(np.argmin(np.abs(t - t1)))
    i2 = int(np.argmin(np.abs(t - t2)))
    if i2 <= i1:
        raise ValueError("need t2 > t1 on the sample grid")
    n1 = _sq_norm(traj1.snapshots[i1] - traj2.snapshots[i1], traj1)
    n2 = _sq_norm(traj1.snapshots[i2] - traj2.snapshots[i2], traj1)
    ts = t[i1:i2 + 1]
    integ = min(
        np.trapezoid(traj1.a_l4_norm[i1:i2 + 1] ** 2, ts),
        np.trapezoid(traj2.a_l4_norm[i1:i2 + 1] ** 2, ts),
    )
    md, eps0 = params.require_md(), params.eps0
    expo = -params.nu * eps0 * params.lam * (t[i2] - t[i1]) + md**2 / (2 * params.nu * eps0) * integ
    ratio = n2 / n1 if n1 > 0 else 0.0
    return ContractionResult(float(t[i1]), float(t[i2]), float(ratio), float(math.exp(expo)))


def _sq_norm(c: np.ndarray, rec: TrajectoryRecord) -> float:
    grid = rec.grid
    return float(grid.L**2 * np.sum(grid.weights * np.abs(c) ** 2))


def contraction_windows(
    traj1: TrajectoryRecord, traj2: TrajectoryRecord, params: FluidParams, windows: int = 10
) -> list[ContractionResult]:
    t = traj1.times
    edges = np.linspace(t[0], t[-1], windows + 1)
    return [contraction_check(traj1, traj2, params, a, b) for a, b in zip(edges[:-1], edges[1:])]


@dataclass
class SingletonResult:
    a_star: SpectralField
    max_pairwise_dist: float
    converged: bool
    rho: float | None
    finals: list
    records: list


def find_singleton(
    g: SpectralField,
    params: FluidParams,
    config: SolverConfig,
    ics: list[SpectralField],
) -> SingletonResult:
    """Integrate every initial condition to t_end and test for a common limit."""
    rho = compute_rho(params, g) if params.md_estimate is not None else None
    if rho is not None and rho <= 0:
        warnings.warn(f"smallness margin rho = {rho:.4g} <= 0; a singleton attractor is not guaranteed")
    finals, records = [], []
    for m0 in ics:
        mf, rec = integrate(m0, g, params, config)
        finals.append(mf)
        records.append(rec)
    dmax = max((norm(a - b, "L2") for a, b in combinations(finals, 2)), default=0.0)
    settled = all(
        _sq_norm(r.last_states[-1] - r.last_states[0], r) ** 0.5 < config.steady_tol for r in records
    )
    a_star = SpectralField(g.grid, np.mean([f.coeffs for f in finals], axis=0))
    return SingletonResult(
        a_star, float(dmax), bool(dmax < config.steady_tol and settled), rho, finals, records
    )


def write_diagnostics_csv(rec: TrajectoryRecord, params: FluidParams, path: str | Path) -> None:
    """Columns t, l2, v, a_l4, energy_residual (residual of the interval ending at t)."""
    res = energy_residual_series(rec, params)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "l2", "v", "a_l4", "energy_residual"])
        for j, t in enumerate(rec.times):
            r = repr(float(res[j - 1])) if j > 0 else "nan"
            w.writerow([repr(float(t)), repr(float(rec.l2_norm[j])), repr(float(rec.v_norm[j])),
                        repr(float(rec.a_l4_norm[j])), r])
