"""Quick invariant suite over the field, operator and noise modules."""
from __future__ import annotations

import math
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from .field import (
    GridSpec,
    SpectralField,
    inner,
    leray_project,
    load_checkpoint,
    norm,
    random_divfree_field,
    save_checkpoint,
    sym_grad,
)
from .noise import (
    ou_mode_values,
    ou_rates,
    ou_stationary,
    ou_step,
    ou_tempered_check,
    sample_wiener_path,
    shift_path,
)
from .operators import (
    apply_convection,
    apply_J,
    apply_K,
    md_ratio,
    monotonicity_gap,
    nonlinear_terms,
    trilinear_b,
)

__all__ = ["run_verify", "PROPERTIES"]


def _fields(grid: GridSpec, count: int, seed: int) -> list[SpectralField]:
    rng = np.random.default_rng([seed, 0xF1E1D])
    return [
        random_divfree_field(grid, float(rng.uniform(1.5, 4.0)), seed=int(rng.integers(2**31)),
                             l2=float(10 ** rng.uniform(-1, 1)))
        for _ in range(count)
    ]


def _relmax(values, scales) -> float:
    return float(max(abs(v) / s for v, s in zip(values, scales)))


def p_leray_idempotent(ctx):
    grid = ctx["grid"]
    rng = np.random.default_rng(ctx["seed"])
    raw = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    once = leray_project(grid, raw)
    twice = leray_project(grid, once.coeffs)
    return float(np.abs(twice.coeffs - once.coeffs).max() / np.abs(once.coeffs).max()), 1e-14


def p_divergence_free(ctx):
    return max(m.divergence_error() for m in ctx["fields"]), 1e-12


def p_parseval(ctx):
    vals, scales = [], []
    fs = ctx["fields"]
    for a, b in zip(fs, fs[1:]):
        phys = a.grid.integrate(np.sum(a.physical() * b.physical(), axis=0))
        vals.append(phys - inner(a, b))
        scales.append(norm(a, "L2") * norm(b, "L2"))
    return _relmax(vals, scales), 1e-12


def p_norm_sin_y(ctx):
    grid = ctx["grid"]
    X, Y = grid.coords
    m = SpectralField.from_physical(grid, np.stack([np.sin(Y), np.zeros_like(Y)]))
    target = math.pi * math.sqrt(2) * grid.L / (2 * math.pi)
    return abs(norm(m, "L2") - target) / target, 1e-12


def p_poincare(ctx):
    lam = ctx["grid"].poincare
    worst = max(lam * norm(m, "L2") ** 2 / norm(m, "V") ** 2 for m in ctx["fields"])
    return max(0.0, worst - 1.0), 1e-12


def p_trilinear_skew(ctx):
    fs = ctx["fields"]
    vals = [trilinear_b(p, m, m) for p, m in zip(fs, fs[1:])]
    scales = [norm(p, "L2") * norm(m, "W14") * norm(m, "L4") + 1e-300 for p, m in zip(fs, fs[1:])]
    return _relmax(vals, scales), 1e-11


def p_trace_cubed(ctx):
    vals, scales = [], []
    for m in ctx["fields"]:
        A = sym_grad(m)
        vals.append(m.grid.integrate(A.matmul(A).matmul(A).trace()))
        scales.append(norm(A, "L4") ** 3 * m.grid.L ** 0.5)
    return _relmax(vals, scales), 1e-11


def p_k_pairing(ctx):
    vals, scales = [], []
    for m in ctx["fields"]:
        a4 = norm(sym_grad(m), "L4") ** 4
        vals.append(inner(apply_K(m), m) - 0.5 * a4)
        scales.append(a4)
    return _relmax(vals, scales), 1e-11


def p_j_vanishes_2d(ctx):
    vals = [norm(apply_J(m), "L2") / norm(sym_grad(m), "L4") ** 2 for m in ctx["fields"]]
    return max(vals), 1e-11


def p_fused_matches(ctx):
    p = ctx["params"]
    worst = 0.0
    for m in ctx["fields"][:5]:
        ref = (apply_convection(m) + p.alpha * apply_J(m) + p.beta * apply_K(m)).coeffs
        fused, _ = nonlinear_terms(m.grid, m.coeffs, p.alpha, p.beta)
        worst = max(worst, float(np.abs(fused - ref).max() / np.abs(ref).max()))
    return worst, 1e-12


def p_monotonicity(ctx):
    p = ctx["params"]
    fs = ctx["fields"]
    worst = 0.0
    for a, b in zip(fs, fs[1:]):
        gap = monotonicity_gap(a, b, p)
        worst = max(worst, -gap.slack / gap.scale)
    return worst, 1e-10


def p_md_dominates(ctx):
    md = ctx["params"].require_md()
    others = _fields(ctx["grid"], 20, ctx["seed"] + 1)
    return max(0.0, max(md_ratio(m) for m in others) - md), 1e-15


def p_checkpoint_roundtrip(ctx):
    m = ctx["fields"][0]
    with tempfile.TemporaryDirectory() as d:
        f = Path(d) / "m.tgf"
        save_checkpoint(m, f)
        back = load_checkpoint(f)
    return float(np.abs(back.coeffs - m.coeffs).max()), 0.0


def p_wiener_variance(ctx):
    spec = ctx["noise"]
    dt = 1e-2
    path = sample_wiener_path(spec, 1e4 * dt, dt, L=ctx["grid"].L)
    x = path.dB[:, 0].real
    return abs(x.var() / (path.sigma[0] ** 2 * dt) - 1.0), 0.05


def p_ou_stationary(ctx):
    spec, grid, nu = ctx["noise"], ctx["grid"], ctx["params"].nu
    dt = 2.0
    path = sample_wiener_path(spec, 1e4 * dt, dt, L=grid.L)
    q = ou_stationary(grid, path, nu)
    vals = []
    for j in range(path.n_steps):
        q = ou_step(q, path, j)
        vals.append(ou_mode_values(q, path)[0])
    v = np.array(vals)
    target = path.sigma[0] ** 2 / (2 * ou_rates(path.kmag[:1], nu)[0])
    return abs(v.real.var() / target - 1.0), 0.05


def p_shift_composition(ctx):
    path = sample_wiener_path(ctx["noise"], 2.0, 0.01, L=ctx["grid"].L)
    a = shift_path(shift_path(path, 0.3), -0.7)
    b = shift_path(path, -0.4)
    same = a.start_index == b.start_index and np.array_equal(a.dB, b.dB)
    return 0.0 if same else 1.0, 0.0


def p_ou_shift(ctx):
    grid, nu = ctx["grid"], ctx["params"].nu
    path = sample_wiener_path(ctx["noise"], 2.0, 0.01, L=grid.L)
    s, t = 0.5, -1.0
    shifted = shift_path(path, s)
    q0 = ou_stationary(grid, path, nu)
    qa, qb = q0, q0
    for j in range(path.index_of(t + s)):
        qa = ou_step(qa, path, j)
    for j in range(shifted.index_of(t)):
        qb = ou_step(qb, shifted, j)
    return float(np.abs(qa.q.coeffs - qb.q.coeffs).max()), 0.0


def p_tempered(ctx):
    a = ou_tempered_check(ctx["noise"], 0.5, 25.0, grid=ctx["grid"], nu=ctx["params"].nu)
    b = ou_tempered_check(ctx["noise"], 0.5, 50.0, grid=ctx["grid"], nu=ctx["params"].nu)
    return abs(b.integral / a.integral - 1.0), 0.01


PROPERTIES: dict[str, Callable] = {
    "leray_projection_idempotent": p_leray_idempotent,
    "fields_divergence_free": p_divergence_free,
    "parseval_inner_product": p_parseval,
    "l2_norm_of_sin_y": p_norm_sin_y,
    "poincare_inequality": p_poincare,
    "trilinear_skew_symmetry": p_trilinear_skew,
    "trace_of_A_cubed_vanishes": p_trace_cubed,
    "K_pairing_identity": p_k_pairing,
    "J_vanishes_in_2d": p_j_vanishes_2d,
    "fused_nonlinearity_matches_operators": p_fused_matches,
    "monotonicity_gap_nonnegative": p_monotonicity,
    "md_estimate_dominates_fresh_fields": p_md_dominates,
    "checkpoint_roundtrip_exact": p_checkpoint_roundtrip,
    "wiener_increment_variance": p_wiener_variance,
    "ou_stationary_variance": p_ou_stationary,
    "path_shift_composition": p_shift_composition,
    "ou_shift_compatibility": p_ou_shift,
    "tempered_integral_horizon_stable": p_tempered,
}


def run_verify(cfg) -> dict:
    """Evaluate every property; each reports a defect value and its tolerance."""
    grid = cfg.grid
    params = cfg.params()
    ctx = {
        "grid": grid,
        "params": params,
        "noise": cfg.noise(),
        "seed": cfg.master_seed,
        "fields": _fields(grid, 12, cfg.master_seed),
    }
    props = []
    for name, fn in PROPERTIES.items():
        try:
            value, tol = fn(ctx)
            status = "pass" if value <= tol else "fail"
            props.append({"name": name, "status": status, "defect": float(value), "tolerance": tol})
        except Exception as exc:  # a crashing check is a failed property, not a crashed report
            props.append({"name": name, "status": "fail", "error": f"{type(exc).__name__}: {exc}"})
    return {
        "grid_n": grid.n,
        "params": {"nu": params.nu, "alpha": params.alpha, "beta": params.beta, "md_estimate": params.md_estimate},
        "properties": props,
        "all_pass": all(p["status"] == "pass" for p in props),
    }
