"""Pathwise random PDE for the transformed state z = m - varsigma q, a direct
Euler-Maruyama route for the noisy system, and pullback solves."""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from itertools import combinations
from pathlib import Path

import numpy as np

from .detsolver import BlowUpError, SolverConfig, _integrator, advance
from .field import SpectralField, leray_project, norm
from .noise import OUState, WienerPath, noise_field, ou_stationary, ou_step
from .operators import FluidParams

__all__ = [
    "StoState",
    "doss_sussmann",
    "inverse_doss_sussmann",
    "step_rpde",
    "em_direct_step",
    "run_rpde",
    "run_direct",
    "PullbackEvent",
    "PullbackResult",
    "pullback_solve",
    "write_manifest",
]


def _shifted(q: OUState, varsigma: float) -> np.ndarray:
    return varsigma * q.q.coeffs


def doss_sussmann(m: SpectralField, q: OUState, varsigma: float) -> SpectralField:
    """z = m - varsigma q."""
    m._check(q.q)
    if varsigma == 0:
        return m.copy()
    return SpectralField(m.grid, m.coeffs - _shifted(q, varsigma))


def inverse_doss_sussmann(z: SpectralField, q: OUState, varsigma: float) -> SpectralField:
    """m = z + varsigma q."""
    z._check(q.q)
    if varsigma == 0:
        return z.copy()
    return SpectralField(z.grid, z.coeffs + _shifted(q, varsigma))


@dataclass
class StoState:
    z: SpectralField
    q: OUState
    varsigma: float
    t: float

    @property
    def m(self) -> SpectralField:
        return inverse_doss_sussmann(self.z, self.q, self.varsigma)


def step_rpde(
    state: StoState,
    g: SpectralField,
    params: FluidParams,
    path: WienerPath,
    config: SolverConfig | None = None,
    forcing: np.ndarray | None = None,
) -> StoState:
    """One exponential-Euler step of

    dz/dt = -nu A z - N(z + varsigma q) + varsigma q + P g,

    with N = B + alpha J + beta K frozen over the step, followed by the exact
    OU update of q across the same path increment.
    """
    grid = state.z.grid
    dt = path.dt
    config = config or SolverConfig(dt=dt)
    j = path.index_of(state.t)
    if j >= path.n_steps:
        raise ValueError(f"path ends at {path.t_end}, cannot step from t = {state.t}")
    Pg = leray_project(grid, g.coeffs).coeffs if forcing is None else forcing
    if state.varsigma == 0:
        c = advance(state.z.coeffs, Pg, params, grid, dt, config)
    else:
        s = _shifted(state.q, state.varsigma)
        c = advance(state.z.coeffs, Pg, params, grid, dt, config, shift=s, extra=s)
    if not np.isfinite(c).all():
        raise BlowUpError(f"non-finite state at t = {state.t + dt:g}")
    q = ou_step(state.q, path, j)
    return StoState(SpectralField(grid, c), q, state.varsigma, path.t_start + (j + 1) * dt)


def em_direct_step(
    m: SpectralField,
    g: SpectralField,
    params: FluidParams,
    dt: float,
    dW: np.ndarray | None,
    varsigma: float,
    config: SolverConfig | None = None,
    forcing: np.ndarray | None = None,
) -> SpectralField:
    """Euler-Maruyama step of dm + (nu A m + N(m)) dt = P g dt + varsigma dW.

    The noise increment enters at the start of the step and is carried by
    the linear propagator: m <- E (m + varsigma dW) + phi (P g - N(m)).
    """
    grid = m.grid
    config = config or SolverConfig(dt=dt)
    Pg = leray_project(grid, g.coeffs).coeffs if forcing is None else forcing
    c = advance(m.coeffs, Pg, params, grid, dt, config)
    if varsigma != 0 and dW is not None and np.any(dW):
        c = c + _integrator(grid, params.nu, dt).E * (varsigma * dW)
    if not np.isfinite(c).all():
        raise BlowUpError("non-finite state after one step")
    return SpectralField(grid, c)


def run_rpde(
    m0: SpectralField,
    q0: OUState,
    g: SpectralField,
    params: FluidParams,
    path: WienerPath,
    varsigma: float,
    t0: float,
    t1: float,
    config: SolverConfig | None = None,
) -> StoState:
    """Transform route from m(t0) = m0 to t1 along ``path``."""
    config = config or SolverConfig(dt=path.dt)
    Pg = leray_project(m0.grid, g.coeffs).coeffs
    state = StoState(doss_sussmann(m0, q0, varsigma), q0, varsigma, t0)
    for _ in range(path.index_of(t1) - path.index_of(t0)):
        state = step_rpde(state, g, params, path, config, forcing=Pg)
    return state


def run_direct(
    m0: SpectralField,
    g: SpectralField,
    params: FluidParams,
    path: WienerPath,
    varsigma: float,
    t0: float,
    t1: float,
    config: SolverConfig | None = None,
) -> SpectralField:
    """Direct Euler-Maruyama route from m(t0) = m0 to t1 along ``path``."""
    config = config or SolverConfig(dt=path.dt)
    grid = m0.grid
    Pg = leray_project(grid, g.coeffs).coeffs
    m = m0
    for j in range(path.index_of(t0), path.index_of(t1)):
        m = em_direct_step(m, g, params, path.dt, noise_field(grid, path, j), varsigma, config, forcing=Pg)
    return m


@dataclass(frozen=True)
class PullbackEvent:
    seed: int
    varsigma: float
    ic_index: int
    t: float
    message: str


@dataclass
class PullbackResult:
    states: list  # SpectralField or None for excluded runs
    pairwise: list  # (i, j, distance) at t = 0
    events: list = dc_field(default_factory=list)
    seed: int = 0
    varsigma: float = 0.0
    T: float = 0.0
    dt: float = 0.0
    z_states: list = dc_field(default_factory=list, repr=False)
    q_final: OUState | None = dc_field(default=None, repr=False)

    @property
    def spread(self) -> float:
        return max((d for _, _, d in self.pairwise), default=0.0)

    @property
    def excluded(self) -> list[int]:
        return [i for i, s in enumerate(self.states) if s is None]

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "varsigma": self.varsigma,
            "T": self.T,
            "dt": self.dt,
            "n_ics": len(self.states),
            "exclusions": len(self.excluded),
            "events": [vars(e) for e in self.events],
            "spread": self.spread,
        }


def pullback_solve(
    path: WienerPath,
    ics: list[SpectralField],
    g: SpectralField,
    params: FluidParams,
    T: float,
    varsigma: float,
    config: SolverConfig | None = None,
    seed: int | None = None,
) -> PullbackResult:
    """Integrate every initial condition from t = -T to 0 along one fixed path.

    q starts from a stationary draw at -T shared by all initial conditions.
    A run that blows up is stopped, recorded as an event and excluded (its
    state is None); the others continue.
    """
    if not ics:
        raise ValueError("need at least one initial condition")
    grid = ics[0].grid
    dt = path.dt
    config = config or SolverConfig(dt=dt)
    seed = path.spec.master_seed if seed is None else seed
    window = path.window(-T, 0.0)
    Pg = leray_project(grid, g.coeffs).coeffs
    q = ou_stationary(grid, window, params.nu)
    zs: list[np.ndarray | None] = [doss_sussmann(m, q, varsigma).coeffs for m in ics]
    events = []
    for j in range(window.n_steps):
        s = _shifted(q, varsigma) if varsigma != 0 else None
        for i, z in enumerate(zs):
            if z is None:
                continue
            try:
                c = advance(z, Pg, params, grid, dt, config, shift=s, extra=s)
                if not np.isfinite(c).all():
                    raise BlowUpError("non-finite state")
                zs[i] = c
            except BlowUpError as exc:
                t = window.t_start + (j + 1) * dt
                events.append(PullbackEvent(seed, varsigma, i, t, str(exc)))
                zs[i] = None
        q = ou_step(q, window, j)
    z_states = [None if z is None else SpectralField(grid, z) for z in zs]
    states = [None if z is None else inverse_doss_sussmann(z, q, varsigma) for z in z_states]
    live = [(i, s) for i, s in enumerate(states) if s is not None]
    pairwise = [(i, k, norm(a - b, "L2")) for (i, a), (k, b) in combinations(live, 2)]
    return PullbackResult(states, pairwise, events, seed, varsigma, T, dt, z_states, q)


def write_manifest(result: PullbackResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(result.manifest(), indent=2, sort_keys=True) + "\n")
