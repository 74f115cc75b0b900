import csv

import pytest

from emla_ctrl import cli
from emla_ctrl.config import default_text


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def short_scenario(tmp_path):
    path = tmp_path / "short.ini"
    path.write_text("[scenario]\nduration = 0.3\n[jaya]\nn_c = 4\ngenerations = 2\nseed = 3\n")
    return path


def test_plan_two_segments(tmp_path, capsys):
    wp = tmp_path / "wp.txt"
    wp.write_text("0 0\n1 0.1\n3 0\n")
    assert cli.main(["plan", str(wp), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "profile.csv")
    assert list(rows[0]) == ["t", "pos", "vel", "acc", "jerk"]
    assert len(rows) == 3001
    assert "max_abs_jerk=" in capsys.readouterr().out


def test_plan_unit_midpoint(tmp_path):
    wp = tmp_path / "unit.txt"
    wp.write_text("0 0 0 0\n1 1 0 0\n")
    assert cli.main(["plan", str(wp), "--out", str(tmp_path), "--quiet"]) == 0
    rows = read_csv(tmp_path / "profile.csv")
    mid = rows[500]
    assert float(mid["t"]) == 0.5
    assert float(mid["pos"]) == pytest.approx(0.5, abs=1e-12)
    assert float(mid["vel"]) == pytest.approx(1.875, abs=1e-12)


def test_plan_unordered_times_exit_2(tmp_path, capsys):
    wp = tmp_path / "bad.txt"
    wp.write_text("0 0\n2 1\n1 0.5\n")
    assert cli.main(["plan", str(wp), "--out", str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_missing_scenario_exit_2(tmp_path):
    assert cli.main(["simulate", "--scenario", str(tmp_path / "nope.ini"),
                     "--out", str(tmp_path)]) == 2


def test_config_errors_listed(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[plant]\nfoo = 1\nbar = 2\n")
    assert cli.main(["simulate", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "line 3" in err


@pytest.mark.parametrize("controller", ["drsblf", "pid"])
def test_simulate_writes_trace_and_metrics(tmp_path, short_scenario, capsys, controller):
    out = tmp_path / controller
    code = cli.main(["simulate", "--scenario", str(short_scenario), "--controller", controller,
                     "--out", str(out)])
    assert code == 0
    rows = read_csv(out / "trace.csv")
    assert len(rows) == 301
    text = capsys.readouterr().out
    assert "Position error (m)" in text
    assert "position_rms=" in text
    assert (out / "metrics.txt").read_text().startswith("Convergence Criteria")


def test_simulate_outputs_deterministic(tmp_path, short_scenario):
    for name in ("a", "b"):
        assert cli.main(["simulate", "--scenario", str(short_scenario), "--quiet",
                         "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "trace.csv").read_text() == (tmp_path / "b" / "trace.csv").read_text()
    assert (tmp_path / "a" / "metrics.txt").read_text() == (tmp_path / "b" / "metrics.txt").read_text()


def test_simulate_barrier_violation_exit_3(tmp_path, capsys):
    path = tmp_path / "tight.ini"
    path.write_text("[envelope]\nchi1 = 0.1201\n[scenario]\nduration = 0.2\n"
                    "initial_state = 0.001 0 0 0\n")
    assert cli.main(["simulate", "--scenario", str(path), "--out", str(tmp_path)]) == 3
    assert "subsystem 1" in capsys.readouterr().err
    assert (tmp_path / "trace.csv").exists()


def test_simulate_numeric_failure_exit_4(tmp_path):
    path = tmp_path / "nan.ini"
    path.write_text("[plant]\nequivalent_inertia = 1e-300\n[scenario]\nduration = 0.1\n"
                    "controller = pid\n")
    assert cli.main(["simulate", "--scenario", str(path), "--out", str(tmp_path)]) == 4


def test_optimize_reproducible_and_writes_gains(tmp_path, short_scenario, capsys):
    args = ["optimize", "--scenario", str(short_scenario), "--quiet"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    ga = (tmp_path / "a" / "gains.ini").read_text()
    assert ga.startswith("[gains.drsblf]")
    assert ga == (tmp_path / "b" / "gains.ini").read_text()
    hist = read_csv(tmp_path / "a" / "convergence.csv")
    assert [int(r["generation"]) for r in hist] == [0, 1, 2]
    best = [float(r["best_fx"]) for r in hist]
    assert best == sorted(best, reverse=True)
    # the gains file is a valid scenario overlay
    over = tmp_path / "reuse.ini"
    over.write_text(short_scenario.read_text() + ga)
    assert cli.main(["simulate", "--scenario", str(over), "--quiet", "--out", str(tmp_path)]) == 0


def test_optimize_zero_generations_and_seed_override(tmp_path, short_scenario, monkeypatch):
    base = ["optimize", "--scenario", str(short_scenario), "--quiet", "--generations", "0"]
    assert cli.main(base + ["--out", str(tmp_path / "a"), "--seed", "9"]) == 0
    monkeypatch.setenv("EMLA_CTRL_SEED", "9")
    assert cli.main(base + ["--out", str(tmp_path / "b")]) == 0
    monkeypatch.delenv("EMLA_CTRL_SEED")
    assert cli.main(base + ["--out", str(tmp_path / "c")]) == 0
    a, b, c = ((tmp_path / n / "gains.ini").read_text() for n in "abc")
    assert a == b and a != c
    assert len(read_csv(tmp_path / "a" / "convergence.csv")) == 1


def test_optimize_warm_start_not_worse(tmp_path, short_scenario, capsys):
    path = tmp_path / "warm.ini"
    path.write_text(short_scenario.read_text() + "warm_start = scenario\n")
    assert cli.main(["optimize", "--scenario", str(path), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    best = float(out.split("best_fx=")[-1].split()[0])
    from emla_ctrl.config import load_scenario
    from emla_ctrl.optimizer import ScenarioObjective
    sc = load_scenario(path)
    assert best <= ScenarioObjective(sc, "drsblf")(sc.gains.to_vector())


def test_bad_seed_env(tmp_path, short_scenario, monkeypatch):
    monkeypatch.setenv("EMLA_CTRL_SEED", "abc")
    assert cli.main(["simulate", "--scenario", str(short_scenario), "--out", str(tmp_path)]) == 2


def test_compare_table_layout(tmp_path, short_scenario, capsys):
    assert cli.main(["compare", "--scenario", str(short_scenario), "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["Convergence", "Criteria", "DRS-BLF", "Control", "PID", "Control"]
    assert [ln.split("  ")[0] for ln in lines[2:]] == [
        "Position error (m)", "Velocity error (m/s)", "Torque effort (N.m)",
        "Convergence speed (s)"]
    assert (tmp_path / "gains.ini").read_text().count("[gains.") == 2
    assert (tmp_path / "convergence_pid.csv").exists()


def test_compare_without_tuning(tmp_path, short_scenario, capsys):
    assert cli.main(["compare", "--scenario", str(short_scenario), "--no-tune",
                     "--out", str(tmp_path)]) == 0
    assert "PID Control" in capsys.readouterr().out


def test_packaged_scenario_parses():
    assert "[gains.drsblf]" in default_text()
