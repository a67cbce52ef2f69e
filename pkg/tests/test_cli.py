import csv
import hashlib
import json
import math

import pytest

from tgflab.cli import ConfigError, RunConfig, build_config, load_config, main, parse_config_text
from tgflab.field import load_checkpoint, norm

FAST = ["--set", "grid.n=16", "--set", "md.trials=100", "--set", "solver.dt=0.002"]


def _run(args, tmp_path, name="out"):
    out = tmp_path / name
    code = main(list(args) + ["--out", str(out)])
    return code, out


class TestConfig:
    def test_defaults(self):
        cfg = build_config({})
        assert cfg == RunConfig()
        assert cfg.params(with_md=False).alpha == 0.5

    def test_key_value_text(self):
        raw = parse_config_text("grid.n = 48  # comment\nforcing.kind = zero\nstudy.varsigmas = [0.4, 0.2]\n")
        cfg = build_config(raw)
        assert cfg.grid_n == 48 and cfg.forcing_kind == "zero" and cfg.study_varsigmas == [0.4, 0.2]

    def test_json_nested(self):
        cfg = build_config(parse_config_text('{"grid": {"n": 24}, "noise": {"sigma0": 0.3}, "master_seed": 4}'))
        assert (cfg.grid_n, cfg.noise_sigma0, cfg.master_seed) == (24, 0.3, 4)

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="grid.size"):
            build_config({"grid.size": 3})

    def test_bad_type_named(self):
        with pytest.raises(ConfigError, match="solver.dt"):
            build_config({"solver.dt": "fast"})

    def test_md_trials_floor(self):
        with pytest.raises(ConfigError, match="md.trials"):
            build_config({"md.trials": 20})

    def test_fractional_int_rejected(self):
        with pytest.raises(ConfigError, match="grid.n"):
            build_config({"grid.n": 32.5})

    def test_malformed_line(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("grid.n 32\n")
        with pytest.raises(ConfigError, match=":1:"):
            load_config(f)

    def test_overrides_win(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("grid.n = 32\n")
        assert load_config(f, ["grid.n=16"]).grid_n == 16

    def test_forcing_modes(self):
        cfg = build_config({"grid.n": 16, "forcing.kind": "modes", "forcing.modes": [[1, 2, 0.1, 0.0]]})
        g = cfg.forcing()
        assert g.divergence_error() <= 1e-15
        assert norm(g) > 0

    def test_forcing_mode_out_of_range(self):
        cfg = build_config({"grid.n": 16, "forcing.kind": "modes", "forcing.modes": [[1, 9, 0.1, 0.0]]})
        with pytest.raises(ConfigError, match="forcing.modes"):
            cfg.forcing()


class TestMain:
    def test_verify_default(self, tmp_path):
        code, out = _run(["verify"], tmp_path)
        assert code == 0
        report = json.loads((out / "verify_report.json").read_text())
        assert len(report["properties"]) >= 12
        assert all(p["status"] == "pass" for p in report["properties"])

    def test_refuses_bad_moduli(self, tmp_path, capsys):
        code, out = _run(["verify", "--set", "params.alpha=10"], tmp_path)
        assert code == 2
        assert "|alpha| < sqrt(2 nu beta)" in capsys.readouterr().err
        assert not out.exists()

    def test_unknown_key(self, tmp_path, capsys):
        code, _ = _run(["verify", "--set", "noise.colour=red"], tmp_path)
        assert code == 2
        assert "noise.colour" in capsys.readouterr().err

    def test_run_needs_workflow(self, tmp_path, capsys):
        code, _ = _run(["run"], tmp_path)
        assert code == 2 and "workflow" in capsys.readouterr().err

    def test_run_uses_config_workflow(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("workflow = verify\ngrid.n = 16\n")
        code, out = _run(["run", str(f)], tmp_path)
        assert code == 0 and (out / "verify_report.json").exists()

    def test_simulate_det(self, tmp_path):
        code, out = _run(["simulate-det", *FAST, "--set", "solver.t_end=0.5"], tmp_path)
        assert code == 0
        header = next(csv.reader((out / "diagnostics.csv").open()))
        assert header == ["t", "l2", "v", "a_l4", "energy_residual"]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["rho"] > 0
        assert load_checkpoint(out / "final_state.tgf").grid.n == 16

    def test_find_attractor_warns_on_nonpositive_rho(self, tmp_path, capsys):
        code, out = _run(["find-attractor", *FAST, "--set", "forcing.amplitude=0.6", "--set", "solver.t_end=0.1",
                          "--set", "study.ics=2"], tmp_path)
        assert "rho" in capsys.readouterr().err
        data = json.loads((out / "singleton.json").read_text())
        assert data["rho_positive"] is False and code == 1

    def test_manifest_hashes(self, tmp_path):
        _, out = _run(["simulate-det", *FAST, "--set", "solver.t_end=0.2"], tmp_path)
        manifest = json.loads((out / "manifest.json").read_text())
        names = {e["file"] for e in manifest["files"]}
        assert names == {p.name for p in out.iterdir()} - {"manifest.json"}
        for e in manifest["files"]:
            data = (out / e["file"]).read_bytes()
            assert e["sha256"] == hashlib.sha256(data).hexdigest() and e["bytes"] == len(data)

    def test_pullback_byte_identical(self, tmp_path):
        args = ["pullback", *FAST, "--set", "solver.t_end=2", "--set", "study.T=1", "--set", "study.n_ics=2",
                "--set", "noise.save_path=true", "--set", "master_seed=5"]
        c1, a = _run(args, tmp_path, "a")
        c2, b = _run(args, tmp_path, "b")
        assert c1 == c2 == 0
        files = sorted(p.name for p in a.iterdir())
        assert files == sorted(p.name for p in b.iterdir())
        assert {"pullback.json", "pullback_point.tgf", "path.tgfw", "manifest.json"} <= set(files)
        for name in files:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_rate_study_summary(self, tmp_path):
        code, out = _run(["rate-study", *FAST, "--set", "solver.t_end=25", "--set", "study.T=1",
                          "--set", "study.varsigmas=[0.4, 0.2, 0.1]"], tmp_path)
        assert code == 0
        summary = json.loads((out / "rate_summary.json").read_text())
        assert math.isfinite(summary["delta_hat"])
        assert summary["seeds_used"] == [20, 20, 20]
        rows = list(csv.reader((out / "rate_study.csv").open()))
        assert len(rows) == 1 + 60

    def test_rate_study_too_few_seeds(self, tmp_path):
        code, out = _run(["rate-study", *FAST, "--set", "solver.t_end=1", "--set", "study.T=0.2",
                          "--set", "study.seeds=2", "--set", "study.varsigmas=[0.4, 0.2, 0.1]"], tmp_path)
        assert code == 1
        assert json.loads((out / "rate_summary.json").read_text())["delta_hat"] is None
