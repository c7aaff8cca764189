import numpy as np
import pytest

from dcgridsim import cli, synthetic
from dcgridsim.timeseries import TimeSeries
from conftest import T0

CONFIG = """
[run]
start = 2024-07-01T10:00:00
end = 2024-07-01T11:00:00
[inputs]
workload = workload.csv
p_em = p_em.csv
p_rm = p_rm.csv
regd = regd.csv
regd_history = regd_history.csv
wetbulb = wetbulb.csv
[scheduling]
horizon_h = 4
max_evals = 40
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    synthetic.write(d, synthetic.generate(T0, hours=24, sim_hours=12, seed=5))
    (d / "run.ini").write_text(CONFIG)
    return d


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["simulate", "--config", "x.ini"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["simulate", "--config", "x.ini", "--scenario", "NOPE", "--out", "o"])
    assert e.value.code == 2


def test_score_identical_signals(workdir, capsys):
    assert cli.main(["score", "--reg", str(workdir / "regd.csv"), "--res", str(workdir / "regd.csv")]) == 0
    assert capsys.readouterr().out.startswith("s=1 ")


def test_score_delayed_response(tmp_path, capsys):
    x = np.sin(np.arange(460) * 2 * np.pi / 120)
    TimeSeries(T0, 10.0, x[100:]).to_csv(tmp_path / "reg.csv", digits=12)
    TimeSeries(T0, 10.0, x[90:-10]).to_csv(tmp_path / "res.csv", digits=12)
    assert cli.main(["score", "--reg", str(tmp_path / "reg.csv"), "--res", str(tmp_path / "res.csv")]) == 0
    assert "delay=100s" in capsys.readouterr().out


def test_missing_config_exits_1(tmp_path, capsys):
    rc = cli.main(["simulate", "--config", str(tmp_path / "none.ini"), "--scenario", "BL", "--out",
                   str(tmp_path / "o")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_schedule_prints_horizon(workdir, capsys):
    assert cli.main(["schedule", "--config", str(workdir / "run.ini"), "--stage", "2", "--hour", "0"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "hour,P_bas_kW,C_reg_kW,u_c_set_bas_kW"
    assert len(lines) == 1 + 4
    assert cli.main(["schedule", "--config", str(workdir / "run.ini"), "--stage", "1", "--hour", "0.5"]) == 1


def test_simulate_all_then_report(workdir, capsys):
    out = workdir / "runs"
    assert cli.main(["simulate", "--config", str(workdir / "run.ini"), "--scenario", "all", "--out", str(out)]) == 0
    for s in ("BL", "BL_MM", "OPBL_MM"):
        assert (out / s / "cost.csv").is_file()
    assert (out / "report.txt").is_file() and (out / "report.csv").is_file()
    capsys.readouterr()
    assert cli.main(["report", "--runs", str(out / "BL"), str(out / "OPBL_MM")]) == 0
    assert "Total cost" in capsys.readouterr().out


def test_failed_run_is_marked_and_not_reported(workdir, monkeypatch, capsys):
    out = workdir / "broken"

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli.engine, "run_scenarios", boom)
    rc = cli.main(["simulate", "--config", str(workdir / "run.ini"), "--scenario", "BL", "--out", str(out)])
    assert rc == 1
    assert "solver exploded" in (out / cli.FAILED).read_text()
    assert cli.main(["report", "--runs", str(out / "BL")]) == 1
