import json
import shutil
import subprocess
import sys

import pytest

from _fixtures import TUNED_SIGMA
from coopt import matpower as mp
from coopt.cli import ConfigError, RunConfig, bundled_configs, main, validate

BASE = """
[data]
case = "case9"
fleet = "fleet_vta"
demand_scale = 0.01
wind_bus = 4
wind_capacity = 1.0

[model]
model = "{model}"

[scenarios]
n = 10
sigma = {sigma}
seed = 0

[solver]
threads = 1
"""


def write_config(tmp_path, text=None, name="run.toml", **fmt):
    fmt.setdefault("model", "det")
    fmt.setdefault("sigma", 0.1)
    p = tmp_path / name
    p.write_text((text or BASE).format(**fmt))
    return p


def codes(findings):
    return [f.code for f in findings]


# -- configuration -----------------------------------------------------------------------


def test_bundled_configs_listed_and_valid():
    names = bundled_configs()
    assert "case9_det.toml" in names and len(names) >= 9
    for name in names:
        cfg = RunConfig.load(name)
        assert [f for f in validate(cfg) if f.severity == "error"] == [], name


def test_unknown_key_and_section(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(write_config(tmp_path, BASE + "\n[extra]\nx = 1\n"))
    with pytest.raises(ConfigError):
        RunConfig.load(write_config(tmp_path, BASE.replace("wind_bus = 4", "wind_bsu = 4")))


@pytest.mark.parametrize("edit", [("model = \"{model}\"", "model = \"milp\""), ("[model]", "[model]\nalpha = 1.5"),
                                  ("n = 10", "n = 0")])
def test_bad_enum_values(tmp_path, edit):
    with pytest.raises(ConfigError):
        RunConfig.load(write_config(tmp_path, BASE.replace(*edit)))


def test_wind_bus_zero_means_no_wind(tmp_path):
    cfg = RunConfig.load(write_config(tmp_path, BASE.replace("wind_bus = 4", "wind_bus = 0")))
    assert cfg.wind_bus is None


def test_validate_clean(tmp_path):
    assert validate(RunConfig.load(write_config(tmp_path))) == []


def test_validate_missing_fleet(tmp_path):
    cfg = RunConfig.load(write_config(tmp_path, BASE.replace('"fleet_vta"', '"nowhere.json"')))
    assert codes(validate(cfg)) == ["missing_file"]


def test_validate_short_off_schedule(tmp_path):
    data = json.loads((mp.bundled_case_path("case9").parent.parent / "fleet_vta.json").read_text())
    bus = data["buses"][0]
    # one off period, empty battery: rate x time cannot refill it
    bus.update(initial_level=bus["battery_min"], off_schedule=[21, 21])
    (tmp_path / "short.json").write_text(json.dumps(data))
    cfg = RunConfig.load(write_config(tmp_path, BASE.replace('"fleet_vta"', '"short.json"')))
    assert "recharge_infeasible" in codes(validate(cfg))


def test_validate_unknown_wind_bus_and_profile(tmp_path):
    (tmp_path / "short.csv").write_text("period,mw\n1,0.5\n2,0.5\n")
    cfg = RunConfig.load(write_config(tmp_path, BASE.replace("wind_bus = 4", "wind_bus = 42")))
    assert "unknown_wind_bus" in codes(validate(cfg))
    cfg = RunConfig.load(write_config(tmp_path, BASE.replace('demand_scale', 'wind_profile = "short.csv"\ndemand_scale')))
    assert "profile_length" in codes(validate(cfg))


def test_validate_command_exit_codes(tmp_path, capsys):
    assert main(["validate", "--config", str(write_config(tmp_path))]) == 0
    assert json.loads(capsys.readouterr().out) == []
    bad = write_config(tmp_path, BASE.replace('"fleet_vta"', '"nowhere.json"'), name="bad.toml")
    assert main(["validate", "--config", str(bad)]) == 1


# -- runs --------------------------------------------------------------------------------


def test_run_det(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", "case9_det.toml", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "optimal"
    assert set(rep["terms"]) == {"generation", "charging"}
    assert rep["max_residual"] <= 1e-6
    assert "seconds" not in (out / "report.json").read_text()
    log = (out / "run.log").read_text()
    assert "rows" in log and "solved" in log  # counts and solve time live in the log
    for name in ("summary.json", "dispatch.csv", "prices.csv"):
        assert (out / name).exists()
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["status"] == "optimal"


def test_run_charge2ssp_reports_tuned_utilization(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", "case9_charge2ssp.toml", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["scenarios_sigma"] == TUNED_SIGMA
    assert rep["wind_utilization"] == pytest.approx(0.9645, abs=1e-4)
    assert len(rep["wind_shortfall_by_period"]) == 24


def test_infeasible_run_exits_2(tmp_path):
    cfg = write_config(tmp_path, BASE.replace("wind_capacity", "line_limit = 0.5\nwind_capacity"), model="pricing")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    assert json.loads((out / "report.json").read_text())["status"] == "infeasible"


def test_error_run_writes_error_json(tmp_path, capsys):
    cfg = write_config(tmp_path, BASE.replace('"case9"', '"broken.m"'))
    (tmp_path / "broken.m").write_text("function mpc = broken\nmpc.baseMVA = 100;\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 1
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "ConfigError" and "case_error" in err["message"]
    assert json.loads(capsys.readouterr().err.strip())["error"] == "ConfigError"


def test_unreadable_config_exits_1(tmp_path, capsys):
    p = tmp_path / "x.toml"
    p.write_text("[data\n")
    assert main(["run", "--config", str(p)]) == 1
    assert "error" in json.loads(capsys.readouterr().err)


# -- other subcommands -------------------------------------------------------------------


def test_oracle_command(capsys):
    assert main(["oracle", "--instance", "micro2_stochastic"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    for line in lines:
        assert float(line.split("rel_gap")[1]) < 1e-6


def test_oracle_unknown_instance(capsys):
    assert main(["oracle", "--instance", "micro9"]) == 1


def test_dump_case_matpower_round_trips(capsys):
    assert main(["dump-case", "case14", "--matpower"]) == 0
    text = capsys.readouterr().out
    assert mp.parse_case(text) == mp.read_case(mp.bundled_case_path("case14"))


def test_dump_case_json(capsys):
    assert main(["dump-case", "case9"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert len(data["bus"]) == 9 and data["base_mva"] == 100.0
    assert main(["dump-case", "case0"]) == 1


def test_plot_command(tmp_path, capsys):
    (tmp_path / "fig14_efficacy.csv").write_text("gamma,ramping_total,charging_total\n0.8,1.0,2.0\n0.9,1.5,1.4\n")
    (tmp_path / "dispatch.csv").write_text("variable,index,value\npg,g=1;t=1,0.5\n")
    assert main(["plot", str(tmp_path)]) == 0
    written = capsys.readouterr().out.split()
    assert [p.endswith("fig14_efficacy.svg") for p in written] == [True]
    first = (tmp_path / "fig14_efficacy.svg").read_bytes()
    main(["plot", str(tmp_path)])
    assert (tmp_path / "fig14_efficacy.svg").read_bytes() == first


def test_configs_command(capsys):
    assert main(["configs"]) == 0
    assert "case9_efficacy.toml" in capsys.readouterr().out


@pytest.mark.skipif(shutil.which("coopt") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["coopt", "configs"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "case9_det.toml" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "coopt.cli", "oracle", "--instance", "random2"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
