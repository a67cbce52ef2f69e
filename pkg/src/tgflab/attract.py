"""Attractor samples, Hausdorff distances and the noise-intensity rate study."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field
from functools import partial
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .detsolver import SolverConfig
from .field import SpectralField, norm, random_divfree_field
from .noise import NoiseSpec, WienerPath, sample_wiener_path
from .operators import FluidParams
from .parallel import parallel_map
from .rdsolver import pullback_solve

__all__ = [
    "HausdorffResult",
    "hausdorff_dist",
    "perturbation_radius",
    "AttractorSample",
    "attractor_point",
    "HorizonCheck",
    "choose_horizon",
    "RateStudyResult",
    "rate_fit",
    "rate_study",
    "write_rate_csv",
    "write_rate_summary",
]

RATE_EXPONENT = 2.0 / 3.0
RADIUS_EXPONENT = 4.0 / 3.0
GROWTH_LIMIT = 1.25


@dataclass(frozen=True)
class HausdorffResult:
    d_AB: float
    d_BA: float
    d_H: float


def _as_vectors(points: list[SpectralField]) -> np.ndarray:
    """Rows whose Euclidean distances equal L2 distances of the fields."""
    grid = points[0].grid
    for p in points[1:]:
        points[0]._check(p)
    w = grid.L * np.sqrt(grid.weights)
    rows = [(w * p.coeffs).ravel() for p in points]
    return np.concatenate([np.real(rows), np.imag(rows)], axis=1)


def hausdorff_dist(A: list[SpectralField], B: list[SpectralField]) -> HausdorffResult:
    """Semi-distances sup_a inf_b |a - b|, sup_b inf_a |a - b| in L2 and their max."""
    if not A or not B:
        raise ValueError("Hausdorff distance needs nonempty point sets")
    A[0]._check(B[0])
    D = cdist(_as_vectors(list(A)), _as_vectors(list(B)))
    d_ab = float(D.min(axis=1).max())
    d_ba = float(D.min(axis=0).max())
    return HausdorffResult(d_ab, d_ba, max(d_ab, d_ba))


def perturbation_radius(
    g: SpectralField,
    params: FluidParams,
    path: WienerPath,
    varsigma: float,
    T: float,
    a_star: SpectralField,
    config: SolverConfig | None = None,
    ic: SpectralField | None = None,
) -> float:
    """gamma estimate ||u(0)||_2^2 / varsigma^(4/3) with u = z - m_det.

    z is the transformed state and m_det the deterministic solution, both
    started at ``ic`` (default a*) at time -T on the same time grid.  From
    a* the deterministic run stays at a* to within the singleton tolerance,
    so this is also ||z(0) - a*||_2^2 / varsigma^(4/3).
    """
    if not varsigma > 0:
        raise ValueError(f"perturbation_radius needs varsigma > 0, got {varsigma}")
    ic = a_star if ic is None else ic
    res = pullback_solve(path, [ic], g, params, T, varsigma, config)
    det = pullback_solve(path, [ic], g, params, T, 0.0, config)
    if res.excluded or det.excluded:
        raise FloatingPointError(f"blow-up in perturbation run: {[vars(e) for e in res.events + det.events]}")
    u = res.z_states[0] - det.z_states[0]
    return norm(u, "L2") ** 2 / varsigma**RADIUS_EXPONENT


@dataclass
class AttractorSample:
    omega_seed: int
    varsigma: float
    point: SpectralField | None
    spread: float
    distance_to_astar: float
    excluded: int = 0
    n_ics: int = 1
    events: list = dc_field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.point is not None


def _initial_conditions(a_star: SpectralField, n_ics: int, omega_seed: int, l2: float = 1.0) -> list:
    ics = [a_star]
    for i in range(1, n_ics):
        seed = int(np.random.SeedSequence([omega_seed, 0x1C, i]).generate_state(1)[0])
        ics.append(a_star + random_divfree_field(a_star.grid, 3.0, seed=seed, l2=l2))
    return ics


def attractor_point(
    path: WienerPath,
    g: SpectralField,
    params: FluidParams,
    varsigma: float,
    T: float,
    a_star: SpectralField,
    n_ics: int = 1,
    config: SolverConfig | None = None,
) -> AttractorSample:
    """Pullback limit at t = 0 from a* and n_ics - 1 random perturbations of it."""
    if n_ics < 1:
        raise ValueError("n_ics must be >= 1")
    ics = _initial_conditions(a_star, n_ics, path.stream)
    res = pullback_solve(path, ics, g, params, T, varsigma, config, seed=path.stream)
    live = [s for s in res.states if s is not None]
    point = live[0] if live else None
    dist = norm(point - a_star, "L2") if point is not None else math.nan
    return AttractorSample(
        path.stream, varsigma, point, res.spread, dist, len(res.excluded), n_ics,
        [vars(e) for e in res.events],
    )


@dataclass(frozen=True)
class HorizonCheck:
    T: float
    change: float
    history: tuple  # ((T, change to the 2T point), ...)
    converged: bool


def choose_horizon(
    spec: NoiseSpec,
    g: SpectralField,
    params: FluidParams,
    a_star: SpectralField,
    dt: float,
    T0: float = 4.0,
    T_max: float = 64.0,
    tol: float = 1e-6,
    stream: int = 0,
    n_ics: int = 1,
    config: SolverConfig | None = None,
) -> HorizonCheck:
    """Smallest T = T0 2^k whose pullback point moves by < tol when T doubles."""
    path = sample_wiener_path(spec, T_max, dt, stream=stream, L=g.grid.L)
    T, history = T0, []
    prev = attractor_point(path, g, params, spec.varsigma, T, a_star, n_ics, config)
    while 2 * T <= T_max + 1e-12:
        nxt = attractor_point(path, g, params, spec.varsigma, 2 * T, a_star, n_ics, config)
        if prev.point is None or nxt.point is None:
            raise FloatingPointError(f"blow-up during horizon check at T = {T}")
        change = norm(nxt.point - prev.point, "L2")
        history.append((T, change))
        if change < tol:
            return HorizonCheck(T, change, tuple(history), True)
        T, prev = 2 * T, nxt
    return HorizonCheck(T, history[-1][1] if history else math.nan, tuple(history), False)


@dataclass
class RateStudyResult:
    varsigmas: list
    mean: list
    median: list
    maximum: list
    counts: list
    excluded: list
    delta_hat: float
    prefactor: float
    ratio: list
    ratio_growth: float
    violation: bool
    status: str
    noise_floor: list

    def summary(self) -> dict:
        return {
            "varsigma": self.varsigmas,
            "mean_distance": self.mean,
            "median_distance": self.median,
            "max_distance": self.maximum,
            "seeds_used": self.counts,
            "excluded": self.excluded,
            "excluded_total": int(sum(self.excluded)),
            "delta_hat": self.delta_hat,
            "prefactor": self.prefactor,
            "ratio_series": self.ratio,
            "ratio_growth": self.ratio_growth,
            "growth_violation": self.violation,
            "status": self.status,
            "noise_floor": self.noise_floor,
        }


def rate_fit(
    samples: list[AttractorSample],
    min_seeds: int = 20,
    min_points: int = 3,
    floor: float = 1e-6,
) -> RateStudyResult:
    """Least-squares fit of log(mean distance) against log(varsigma).

    Excluded samples are counted and left out of the statistics.  The ratio
    series is mean distance / varsigma^(2/3); ``ratio_growth`` is its largest
    value at a smaller varsigma relative to the value at the largest one, and
    growth above 25% is flagged.  Grid points whose mean distance does not
    exceed ``floor`` (or the largest pullback spread) are listed as noise
    floor hits and are not fitted.
    """
    varsigmas = sorted({s.varsigma for s in samples}, reverse=True)
    if len(varsigmas) < min_points:
        raise ValueError(f"rate fit needs >= {min_points} varsigma values, got {len(varsigmas)}")
    if varsigmas[-1] <= 0:
        raise ValueError("varsigma values must be positive")
    mean, median, mx, counts, excl, floor_hits = [], [], [], [], [], []
    for v in varsigmas:
        group = [s for s in samples if s.varsigma == v]
        good = np.array([s.distance_to_astar for s in group if s.ok])
        excl.append(len(group) - len(good))
        counts.append(len(good))
        if len(good) < min_seeds:
            raise ValueError(f"varsigma = {v}: {len(good)} usable seeds, need >= {min_seeds}")
        mean.append(float(good.mean()))
        median.append(float(np.median(good)))
        mx.append(float(good.max()))
        spread = max(s.spread for s in group if s.ok)
        if mean[-1] <= max(floor, spread):
            floor_hits.append(v)
    ratio = [m / v**RATE_EXPONENT for m, v in zip(mean, varsigmas)]
    fit_idx = [i for i, v in enumerate(varsigmas) if v not in floor_hits and mean[i] > 0]
    if all(m == 0 for m in mean) or len(fit_idx) < 2:
        return RateStudyResult(varsigmas, mean, median, mx, counts, excl, math.nan, math.nan,
                               ratio, math.nan, False, "below resolution", floor_hits)
    x = np.log([varsigmas[i] for i in fit_idx])
    y = np.log([mean[i] for i in fit_idx])
    slope, intercept = np.polyfit(x, y, 1)
    r0 = ratio[fit_idx[0]]
    growth = max(ratio[i] / r0 for i in fit_idx[1:])
    return RateStudyResult(
        varsigmas, mean, median, mx, counts, excl, float(slope), float(math.exp(intercept)),
        ratio, float(growth), bool(growth > GROWTH_LIMIT), "ok", floor_hits,
    )


@dataclass(frozen=True)
class _Task:
    spec: NoiseSpec
    varsigma: float
    stream: int
    T: float
    dt: float
    n_ics: int


def _run_task(task: _Task, g, params, a_star, config) -> AttractorSample:
    path = sample_wiener_path(task.spec, task.T, task.dt, stream=task.stream, L=g.grid.L)
    return attractor_point(path, g, params, task.varsigma, task.T, a_star, task.n_ics, config)


def rate_study(
    spec: NoiseSpec,
    g: SpectralField,
    params: FluidParams,
    a_star: SpectralField,
    varsigmas: list[float],
    seeds: int,
    T: float,
    dt: float,
    n_ics: int = 1,
    config: SolverConfig | None = None,
    workers: int | None = None,
) -> tuple[list[AttractorSample], RateStudyResult | None]:
    """Attractor points for every (varsigma, seed); seed i uses path stream i.

    Samples come back ordered by (varsigma as given, seed).
    """
    tasks = [_Task(spec, v, s, T, dt, n_ics) for v in varsigmas for s in range(seeds)]
    fn = partial(_run_task, g=g, params=params, a_star=a_star, config=config or SolverConfig(dt=dt))
    samples = parallel_map(fn, tasks, workers)
    try:
        result = rate_fit(samples, min_seeds=min(20, seeds))
    except ValueError:
        result = None
    return samples, result


def write_rate_csv(samples: list[AttractorSample], path: str | Path) -> None:
    """Columns varsigma, seed, distance, spread, excluded."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["varsigma", "seed", "distance", "spread", "excluded"])
        for s in samples:
            w.writerow([repr(float(s.varsigma)), s.omega_seed, repr(float(s.distance_to_astar)),
                        repr(float(s.spread)), s.excluded])


def write_rate_summary(result: RateStudyResult, path: str | Path, extra: dict | None = None) -> None:
    data = result.summary()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(_finite(data), indent=2, sort_keys=True) + "\n")


def _finite(x):
    """JSON-safe copy: non-finite floats become None."""
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x
