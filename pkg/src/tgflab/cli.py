"""Command line entry point: tgflab <workflow> [config] [--out DIR] [--set key=value ...]."""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import warnings
from dataclasses import dataclass, field as dc_field, fields
from pathlib import Path

import numpy as np

from .attract import _initial_conditions, choose_horizon, rate_fit, rate_study, write_rate_csv, write_rate_summary
from .detsolver import (
    BlowUpError,
    SolverConfig,
    energy_residual,
    find_singleton,
    integrate,
    write_diagnostics_csv,
)
from .field import (
    GridSpec,
    SpectralField,
    hermitian_fix,
    load_checkpoint,
    norm,
    random_divfree_field,
    save_checkpoint,
    taylor_green,
)
from .noise import NoiseSpec, sample_wiener_path, save_path
from .operators import FluidParams, ParameterError, compute_rho, estimate_md
from .rdsolver import pullback_solve

WORKFLOWS = ("verify", "simulate-det", "find-attractor", "pullback", "rate-study")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    grid_n: int = 32
    grid_L: float = 2 * math.pi
    params_nu: float = 1.0
    params_alpha: float = 0.5
    params_beta: float = 1.0
    forcing_kind: str = "taylor-green"
    forcing_amplitude: float = 0.2
    forcing_modes: list = dc_field(default_factory=list)
    noise_sigma0: float = 0.1
    noise_decay_s: float = 3.0
    noise_k_cut: float = 4.0
    noise_varsigma: float = 0.2
    noise_save_path: bool = False
    solver_dt: float = 1e-3
    solver_t_end: float = 20.0
    solver_monitor_stride: int = 10
    solver_steady_tol: float = 1e-8
    study_varsigmas: list = dc_field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    study_seeds: int = 20
    study_T: float | None = None
    study_T0: float = 4.0
    study_T_max: float = 64.0
    study_horizon_tol: float = 1e-6
    study_n_ics: int = 1
    study_ics: int = 8
    study_a_star: str | None = None
    md_trials: int = 200
    md_safety: float = 1.5
    workflow: str | None = None
    output_dir: str = "out"
    master_seed: int = 0

    # -- derived objects -------------------------------------------------
    @property
    def grid(self) -> GridSpec:
        return GridSpec(n=self.grid_n, L=self.grid_L)

    def params(self, with_md: bool = True) -> FluidParams:
        p = FluidParams(nu=self.params_nu, alpha=self.params_alpha, beta=self.params_beta,
                        lam=self.grid.poincare)
        if with_md:
            p = p.with_md(estimate_md(self.grid, self.md_trials, self.master_seed, self.md_safety))
        return p

    def noise(self, varsigma: float | None = None) -> NoiseSpec:
        return NoiseSpec(self.noise_sigma0, self.noise_decay_s, self.noise_k_cut,
                         self.noise_varsigma if varsigma is None else varsigma, self.master_seed)

    def solver(self) -> SolverConfig:
        return SolverConfig(dt=self.solver_dt, t_end=self.solver_t_end,
                            monitor_stride=self.solver_monitor_stride, steady_tol=self.solver_steady_tol)

    def forcing(self) -> SpectralField:
        grid = self.grid
        if self.forcing_kind == "taylor-green":
            return taylor_green(grid, self.forcing_amplitude)
        if self.forcing_kind == "modes":
            c = np.zeros(grid.shape, dtype=complex)
            for entry in self.forcing_modes:
                try:
                    a, b, re, im = entry
                    a, b, re, im = int(a), int(b), float(re), float(im)
                except (TypeError, ValueError):
                    raise ConfigError(f"forcing.modes: expected [kx, ky, re, im] entries, got {entry!r}") from None
                if b < 0 or (b == 0 and a <= 0) or max(abs(a), b) >= grid.n // 2:
                    raise ConfigError(f"forcing.modes: mode ({a}, {b}) is not a resolved half-plane mode")
                r = math.hypot(a, b)
                c[:, a % grid.n, b] += np.array([-b / r, a / r]) * complex(re, im)
            return SpectralField(grid, hermitian_fix(grid, c))
        if self.forcing_kind == "zero":
            return SpectralField.zeros(grid)
        raise ConfigError(f"forcing.kind: unknown forcing {self.forcing_kind!r}")


_KEYS = {f.name.replace("_", ".", 1) if f.name.split("_")[0] in
         ("grid", "params", "forcing", "noise", "solver", "study", "md") else f.name: f for f in fields(RunConfig)}


def _coerce(key: str, value, f):
    kind = f.type
    try:
        if value is None:
            if "None" in kind:
                return None
            raise TypeError("null is not allowed")
        if kind.startswith("int"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError(f"expected an integer, got {value!r}")
            return int(value)
        if kind.startswith("float"):
            if isinstance(value, bool):
                raise TypeError(f"expected a number, got {value!r}")
            return float(value)
        if kind.startswith("bool"):
            if not isinstance(value, bool):
                raise TypeError(f"expected true or false, got {value!r}")
            return value
        if kind.startswith("list"):
            if not isinstance(value, list):
                raise TypeError(f"expected a list, got {value!r}")
            return value
        if kind.startswith("str"):
            return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from None
    return value


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``section.key = value`` lines (values in JSON syntax, bare words as strings) or a JSON object."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            return _flatten(json.loads(stripped))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: invalid JSON: {exc}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _parse_value(value)
    return out


def build_config(raw: dict) -> RunConfig:
    cfg = RunConfig()
    for key, value in raw.items():
        f = _KEYS.get(key)
        if f is None:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, f.name, _coerce(key, value, f))
    if cfg.grid_n < 8 or cfg.grid_n % 2:
        raise ConfigError(f"config key 'grid.n': need an even size >= 8, got {cfg.grid_n}")
    if cfg.md_trials < 100:
        raise ConfigError(f"config key 'md.trials': need >= 100 trials, got {cfg.md_trials}")
    if cfg.workflow is not None and cfg.workflow not in WORKFLOWS:
        raise ConfigError(f"config key 'workflow': unknown workflow {cfg.workflow!r}")
    return cfg


def load_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    raw = {}
    if path is not None:
        p = Path(path)
        try:
            raw = parse_config_text(p.read_text(), str(p))
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = _parse_value(v)
    return build_config(raw)


# --- artifacts ---------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def write_manifest(out: Path) -> Path:
    entries = []
    for p in sorted(out.iterdir()):
        if p.is_file() and p.name != "manifest.json":
            data = p.read_bytes()
            entries.append({"file": p.name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
    dest = out / "manifest.json"
    write_json(dest, {"files": entries})
    return dest


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _steady_state(cfg: RunConfig, params: FluidParams, g: SpectralField) -> SpectralField:
    if cfg.study_a_star:
        a = load_checkpoint(cfg.study_a_star)
        if a.grid.n != cfg.grid_n or a.grid.L != cfg.grid_L:
            raise ConfigError("config key 'study.a_star': checkpoint grid does not match grid.n/grid.L")
        return a
    a, rec = integrate(SpectralField.zeros(cfg.grid), g, params, cfg.solver())
    step = norm(SpectralField(cfg.grid, rec.last_states[-1] - rec.last_states[0]), "L2")
    if step >= cfg.solver_steady_tol:
        _log(f"warning: steady state not settled after t = {cfg.solver_t_end:g} (last change {step:.3g})")
    return a


# --- workflows ---------------------------------------------------------------


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    from .verify import run_verify

    report = run_verify(cfg)
    write_json(out / "verify_report.json", report)
    failed = [p["name"] for p in report["properties"] if p["status"] != "pass"]
    _log(f"verify: {len(report['properties']) - len(failed)}/{len(report['properties'])} properties pass")
    for name in failed:
        _log(f"  FAIL {name}")
    return 0 if not failed else 1


def cmd_simulate_det(cfg: RunConfig, out: Path) -> int:
    params = cfg.params()
    g = cfg.forcing()
    m0 = random_divfree_field(cfg.grid, 3.0, seed=cfg.master_seed, l2=1.0)
    mf, rec = integrate(m0, g, params, cfg.solver())
    write_diagnostics_csv(rec, params, out / "diagnostics.csv")
    save_checkpoint(mf, out / "final_state.tgf")
    write_json(out / "summary.json", {
        "rho": compute_rho(params, g),
        "md_estimate": params.md_estimate,
        "energy_residual_max": energy_residual(rec, params),
        "absorbing_entry_time": rec.absorbing_entry_time,
        "final_l2": rec.l2_norm[-1],
        "g_hminus1": rec.g_hm1,
        "t_end": rec.times[-1],
    })
    return 0


def cmd_find_attractor(cfg: RunConfig, out: Path) -> int:
    params = cfg.params()
    g = cfg.forcing()
    rho = compute_rho(params, g)
    if rho <= 0:
        _log(f"warning: smallness margin rho = {rho:.4g} <= 0; a singleton attractor is not guaranteed")
    ics = [random_divfree_field(cfg.grid, 3.0, seed=cfg.master_seed * 1000 + i, l2=1.0) for i in range(cfg.study_ics)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = find_singleton(g, params, cfg.solver(), ics)
    save_checkpoint(res.a_star, out / "a_star.tgf")
    write_json(out / "singleton.json", {
        "rho": rho,
        "rho_positive": rho > 0,
        "md_estimate": params.md_estimate,
        "max_pairwise_dist": res.max_pairwise_dist,
        "converged": res.converged,
        "steady_tol": cfg.solver_steady_tol,
        "n_ics": len(ics),
        "a_star_l2": norm(res.a_star, "L2"),
    })
    return 0 if res.converged else 1


def _horizon(cfg: RunConfig, params, g, a_star) -> tuple[float, dict]:
    if cfg.study_T is not None:
        return cfg.study_T, {"source": "config"}
    spec = cfg.noise(max(cfg.study_varsigmas) if cfg.study_varsigmas else cfg.noise_varsigma)
    chk = choose_horizon(spec, g, params, a_star, cfg.solver_dt, cfg.study_T0, cfg.study_T_max,
                         cfg.study_horizon_tol, config=cfg.solver())
    if not chk.converged:
        _log(f"warning: doubling check did not reach tol {cfg.study_horizon_tol:g} by T = {chk.T:g}")
    return chk.T, {"source": "doubling check", "converged": chk.converged,
                   "history": [list(h) for h in chk.history], "varsigma": spec.varsigma}


def cmd_pullback(cfg: RunConfig, out: Path) -> int:
    params = cfg.params(with_md=False)
    g = cfg.forcing()
    a_star = _steady_state(cfg, params, g)
    T, horizon = _horizon(cfg, params, g, a_star)
    spec = cfg.noise()
    path = sample_wiener_path(spec, T, cfg.solver_dt, stream=0, L=cfg.grid_L)
    if cfg.noise_save_path:
        save_path(path, out / "path.tgfw")
    ics = _initial_conditions(a_star, max(cfg.study_n_ics, 1), 0)
    res = pullback_solve(path, ics, g, params, T, spec.varsigma, cfg.solver(), seed=0)
    live = [s for s in res.states if s is not None]
    if live:
        save_checkpoint(live[0], out / "pullback_point.tgf")
    data = res.manifest()
    data.update({
        "master_seed": cfg.master_seed,
        "horizon": horizon,
        "pairwise": [list(p) for p in res.pairwise],
        "distance_to_astar": norm(live[0] - a_star, "L2") if live else math.nan,
    })
    write_json(out / "pullback.json", data)
    return 0 if not res.excluded else 1


def cmd_rate_study(cfg: RunConfig, out: Path) -> int:
    params = cfg.params(with_md=False)
    g = cfg.forcing()
    a_star = _steady_state(cfg, params, g)
    save_checkpoint(a_star, out / "a_star.tgf")
    T, horizon = _horizon(cfg, params, g, a_star)
    varsigmas = sorted(cfg.study_varsigmas, reverse=True)
    samples, _ = rate_study(cfg.noise(varsigmas[0]), g, params, a_star, varsigmas, cfg.study_seeds, T,
                            cfg.solver_dt, cfg.study_n_ics, cfg.solver())
    write_rate_csv(samples, out / "rate_study.csv")
    extra = {"T": T, "dt": cfg.solver_dt, "horizon": horizon, "master_seed": cfg.master_seed,
             "n": cfg.grid_n, "n_ics": cfg.study_n_ics}
    try:
        result = rate_fit(samples, min_seeds=20)
    except ValueError as exc:
        write_json(out / "rate_summary.json", {**extra, "status": f"invalid study: {exc}", "delta_hat": None})
        _log(f"rate-study: {exc}")
        return 1
    write_rate_summary(result, out / "rate_summary.json", _jsonable(extra))
    _log(f"rate-study: delta_hat = {result.delta_hat:.4g}, ratio growth = {result.ratio_growth:.4g}")
    return 0 if sum(result.excluded) == 0 else 1


COMMANDS = {
    "verify": cmd_verify,
    "simulate-det": cmd_simulate_det,
    "find-attractor": cmd_find_attractor,
    "pullback": cmd_pullback,
    "rate-study": cmd_rate_study,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tgflab", description=__doc__)
    ap.add_argument("workflow", choices=WORKFLOWS + ("run",),
                    help="workflow to execute; 'run' takes it from the config key 'workflow'")
    ap.add_argument("config", nargs="?", help="key = value text or JSON config file")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        workflow = args.workflow
        if workflow == "run":
            if cfg.workflow is None:
                raise ConfigError("config key 'workflow' is required with 'run'")
            workflow = cfg.workflow
        cfg.params(with_md=False)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except ParameterError as exc:
        _log(f"refusing to run: {exc}")
        return 2
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        code = COMMANDS[workflow](cfg, out)
    except (ConfigError, ParameterError) as exc:
        _log(f"config error: {exc}")
        return 2
    except BlowUpError as exc:
        _log(f"blow-up: {exc}")
        code = 1
    write_manifest(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
