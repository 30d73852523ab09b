"""Config validation, artifact generation, determinism, exit codes."""

import json
from pathlib import Path

import pytest

from phiheat.cli import main, parse_config, run

STOCHASTIC_CFG = """
[run]
subcommand = stochastic-check
seed = 7

[model]
kind = ExactProduct
b = 1
f = 1
x_min = 0.02
x_max = 1.0

[stochastic]
r_max = 1000
n_radii = 160
"""

HEAT_CFG = """
[run]
subcommand = heat-solve
seed = 0

[model]
kind = ExactProduct
b = 1
f = 1
x_min = 0.05
x_max = 1.0

[grid]
n_x = 64
k = 1
l = 1
t = 0.1
n_t = 21

[heat]
bump_center = 0.4
bump_width = 0.08
"""

HEATSPACE_CFG = """
[run]
subcommand = heatspace-sample
seed = 3

[model]
kind = ExactProduct
b = 1
f = 1

[heatspace]
n_per_regime = 50
"""


def write_cfg(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestParseConfig:
    def test_missing_subcommand(self, tmp_path):
        p = write_cfg(tmp_path, "[run]\nseed = 1\n")
        with pytest.raises(Exception) as err:
            parse_config(p)
        assert "subcommand" in str(err.value)

    def test_empty_config_exit_2(self, tmp_path, capsys):
        p = write_cfg(tmp_path, "")
        code = main([str(p)])
        assert code == 2
        assert "subcommand" in capsys.readouterr().err

    def test_unknown_key_lists_path(self, tmp_path):
        p = write_cfg(tmp_path, STOCHASTIC_CFG + "\n[grid]\nbogus_key = 1\n")
        with pytest.raises(Exception) as err:
            parse_config(p)
        assert "grid.bogus_key" in str(err.value)

    def test_unknown_section(self, tmp_path):
        p = write_cfg(tmp_path, STOCHASTIC_CFG + "\n[mystery]\nx = 1\n")
        with pytest.raises(Exception) as err:
            parse_config(p)
        assert "mystery" in str(err.value)

    def test_seed_mandatory_for_sampled(self, tmp_path):
        text = STOCHASTIC_CFG.replace("seed = 7\n", "")
        p = write_cfg(tmp_path, text)
        with pytest.raises(Exception) as err:
            parse_config(p)
        assert "seed" in str(err.value)

    def test_required_section(self, tmp_path):
        text = STOCHASTIC_CFG.split("[stochastic]")[0]
        p = write_cfg(tmp_path, text)
        with pytest.raises(Exception) as err:
            parse_config(p)
        assert "stochastic" in str(err.value)

    def test_out_precedence(self, tmp_path, monkeypatch):
        p = write_cfg(tmp_path, STOCHASTIC_CFG)
        monkeypatch.setenv("PHIHEAT_OUT", str(tmp_path / "env_out"))
        cfg = parse_config(p)
        assert cfg.out_dir == tmp_path / "env_out"
        cfg = parse_config(p, out_override=str(tmp_path / "flag_out"))
        assert cfg.out_dir == tmp_path / "flag_out"


class TestRun:
    def test_stochastic_check_summary(self, tmp_path, capsys):
        p = write_cfg(tmp_path, STOCHASTIC_CFG)
        code = main([str(p), "--out", str(tmp_path / "out")])
        assert code == 0
        text = (tmp_path / "out" / "summary.txt").read_text()
        assert "growth_exponent≈2.0" in text
        assert "verdict=Complete" in text
        assert (tmp_path / "out" / "growth.csv").exists()
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["resolved"]["stochastic"]["n_samples"] == 8  # default recorded

    def test_determinism_byte_identical(self, tmp_path):
        p = write_cfg(tmp_path, STOCHASTIC_CFG)
        assert main([str(p), "--out", str(tmp_path / "a")]) == 0
        assert main([str(p), "--out", str(tmp_path / "b")]) == 0
        for name in ("growth.csv", "summary.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_heat_solve_artifacts(self, tmp_path):
        p = write_cfg(tmp_path, HEAT_CFG)
        assert main([str(p), "--out", str(tmp_path / "out")]) == 0
        out = tmp_path / "out"
        assert (out / "trajectory.csv").read_text().splitlines()[0] == "t,x,mode,re,im"
        assert (out / "solution.bin").stat().st_size > 0
        mass = (out / "mass.csv").read_text().splitlines()
        assert mass[0] == "t,mass,relative_drift"
        # binary round-trips through the public reader
        from phiheat.fields import Field

        fld = Field.from_binary((out / "solution.bin").read_bytes())
        assert fld.grid.n_x == 64

    def test_heatspace_sample(self, tmp_path):
        p = write_cfg(tmp_path, HEATSPACE_CFG)
        assert main([str(p), "--out", str(tmp_path / "out")]) == 0
        charts = (tmp_path / "out" / "charts.csv").read_text()
        assert charts.splitlines()[0] == "regime,coord,index,value"
        assert "R5" in charts and "Interior" in charts

    def test_numerical_failure_exit_3(self, tmp_path, capsys):
        # Horizon far beyond the admissible T' for a stiff right-hand side.
        cfg = """
[run]
subcommand = picard-solve
seed = 1

[model]
kind = ExactProduct
b = 1
f = 1
x_min = 0.08
x_max = 1.0

[grid]
n_x = 64
k = 1
l = 1
t = 40.0
n_t = 81
max_step_ratio = 1.1

[rhs]
c = 4.0
q = 4.0
opnorm = 3.0
lipschitz_pairs = 10
"""
        p = write_cfg(tmp_path, cfg)
        code = main([str(p), "--out", str(tmp_path / "out")])
        assert code == 3

    def test_missing_config_file(self, tmp_path):
        assert main([str(tmp_path / "nope.ini")]) == 2
