import io
import math

import numpy as np
import pytest
import scipy.linalg

from emla_ctrl.config import load_scenario
from emla_ctrl.controller import SafetyEnvelope
from emla_ctrl.exceptions import BarrierViolation, NumericalError
from emla_ctrl.plant import LoadProfile, PlantState, torque_from_currents
from emla_ctrl.sim import (COLUMNS, CSV_COLUMNS, FLAG_CLAMP, FLAG_VIOLATION, Metrics,
                           SimulationTrace, check_trace_invariants, compute_metrics,
                           metrics_table, rk4_step, run)
from emla_ctrl.trajectory import WaypointCondition, build_piecewise


@pytest.fixture(scope="module")
def desk():
    return load_scenario()


@pytest.fixture(scope="module")
def short_trace(desk):
    return run(desk.with_(duration=0.5))


# ---------------------------------------------------------------------------
# integrator

A = np.array([[0.0, 1.0], [-4.0, -0.4]])


def _integrate(h, T=2.0):
    f = lambda t, y: tuple(A @ np.asarray(y))
    y = (1.0, 0.0)
    for k in range(int(round(T / h))):
        y = rk4_step(f, k * h, y, h)
    return np.asarray(y)


def test_rk4_fourth_order_on_linear_system():
    exact = scipy.linalg.expm(2.0 * A) @ np.array([1.0, 0.0])
    e1 = np.linalg.norm(_integrate(0.02) - exact)
    e2 = np.linalg.norm(_integrate(0.01) - exact)
    assert e1 / e2 == pytest.approx(16.0, rel=0.2)


def test_rk4_single_step_matches_taylor_for_exponential():
    h = 0.1
    y = rk4_step(lambda t, y: (y[0],), 0.0, (1.0,), h)
    assert y[0] == pytest.approx(1 + h + h**2 / 2 + h**3 / 6 + h**4 / 24, rel=1e-15)


def test_rk4_non_finite_raises():
    with pytest.raises(NumericalError):
        rk4_step(lambda t, y: (math.inf,), 0.0, (1.0,), 0.1)


# ---------------------------------------------------------------------------
# closed loop

def test_trace_shape_and_columns(desk, short_trace):
    assert len(short_trace) == 501
    assert short_trace.data.shape[1] == len(COLUMNS)
    assert short_trace.t[-1] == pytest.approx(0.5)
    assert short_trace.event is None


def test_csv_header_and_round_trip(short_trace):
    text = short_trace.to_csv()
    lines = text.splitlines()
    assert lines[0] == ("t,x1,x2,x3,x4,x1d,x2d,x3d,x4d,e1,e2,e3,e4,u1,u2_raw,u2,u3_raw,u3,"
                        "u4_raw,u4,th1,th2,th3,th4,FL,flags")
    assert tuple(lines[0].split(",")) == CSV_COLUMNS
    back = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1)
    idx = [COLUMNS.index(c) for c in CSV_COLUMNS[:-1]]
    assert np.array_equal(back[:, :-1], short_trace.data[:, idx])


def test_runs_are_deterministic(desk):
    sc = desk.with_(duration=0.2, measurement_noise=(1e-6, 1e-5, 1e-3, 1e-3), seed=7)
    assert run(sc).to_csv() == run(sc).to_csv()
    other = run(sc.with_(seed=8)).to_csv()
    assert other != run(sc).to_csv()


def test_pid_trace_has_no_adaptive_estimates(desk):
    tr = run(desk.with_(duration=0.1, controller="pid"))
    assert np.all(tr.theta == 0.0)


def test_initial_offset_decays(desk):
    from emla_ctrl.trajectory import build_piecewise
    rho1 = desk.envelope.rho[0]
    hold = build_piecewise([(0.0, 0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0)])
    sc = desk.with_(duration=1.0, trajectory=hold, initial_state=PlantState(0.5 * rho1))
    xe = np.abs(run(sc).xe[:, 0])
    assert xe[0] == pytest.approx(0.5 * rho1)
    assert xe[-1] < 0.1 * xe[0]


def test_abort_policy_attaches_partial_trace(desk):
    tight = SafetyEnvelope((0.1201, 0.2, 26.5, 21.0), (0.12, 0.12, 6.5, 1.0))
    sc = desk.with_(envelope=tight, initial_state=PlantState(0.001), duration=0.5)
    with pytest.raises(BarrierViolation) as info:
        run(sc)
    exc = info.value
    assert exc.subsystem == 1
    assert exc.time == 0.0
    assert exc.trace is not None and exc.trace.event


def test_clamp_policy_flags_and_continues(desk):
    tight = SafetyEnvelope((0.1201, 0.2, 26.5, 21.0), (0.12, 0.12, 6.5, 1.0))
    sc = desk.with_(envelope=tight, initial_state=PlantState(0.001), duration=0.05, policy="clamp")
    tr = run(sc)
    assert len(tr) == 51
    assert tr.flags[0] & FLAG_CLAMP[0]
    assert tr.flags[0] & FLAG_VIOLATION
    rep = check_trace_invariants(tr)
    assert rep.clamped_samples >= 1


def test_numerical_failure_reports_time(desk):
    from emla_ctrl.plant import LoadProfile, Step
    load = LoadProfile(disturbances=(None, Step(0.01, math.inf), None, None))
    sc = desk.with_(load=load, duration=0.05, controller="pid")
    with pytest.raises(NumericalError) as info:
        run(sc)
    assert info.value.time == pytest.approx(0.01, abs=2e-3)


@pytest.mark.parametrize("controller", ["drsblf", "pid"])
def test_load_step_holding_torque(desk, controller):
    # parked at 0.1 m with 25 kN applied, the motor must deliver
    # f_eq * 25 kN = 5 N m plus the spring torque at the parked position
    hold = build_piecewise([WaypointCondition(0.0, 0.1, 0.0, 0.0),
                            WaypointCondition(4.0, 0.1, 0.0, 0.0)])
    tr = run(desk.with_(trajectory=hold, duration=4.0, controller=controller,
                        initial_state=PlantState(0.1), load=LoadProfile((0.5,), (25e3,))))
    late = tr.t > 3.0
    torque = torque_from_currents(tr.col("x3")[late], tr.col("x4")[late], desk.params)
    expected = (desk.params.force_coefficient * 25e3
                + desk.params.equivalent_stiffness * 0.1)
    assert np.mean(torque) == pytest.approx(expected, rel=1e-3)


# ---------------------------------------------------------------------------
# metrics

def synthetic(n=1001, dt=1e-3, envelope=None):
    data = np.zeros((n, len(COLUMNS)))
    data[:, COLUMNS.index("t")] = np.arange(n) * dt
    data[:, COLUMNS.index("x1d")] = 0.1
    data[:, COLUMNS.index("th1"):COLUMNS.index("th4") + 1] = 1.0
    env = envelope or SafetyEnvelope((0.14, 0.2, 26.5, 21.0), (0.12, 0.12, 6.5, 1.0))
    from emla_ctrl.plant import ActuatorLimits
    lim = ActuatorLimits((-98.0, 98.0), (-400.0, 400.0), (-400.0, 400.0))
    return SimulationTrace(data, "drsblf", env, lim, (n - 1) * dt)


def test_metrics_sinusoidal_error():
    tr = synthetic(n=10001)
    t = tr.t
    A = 3e-3
    tr.data[:, COLUMNS.index("xe1")] = A * np.sin(2 * np.pi * 5 * t + 1.0)
    tr.data[:, COLUMNS.index("u2")] = 3.0
    m = compute_metrics(tr)
    assert m.position_rms == pytest.approx(A / math.sqrt(2), rel=1e-3)
    # grid of 1 ms can miss the crest by at most A * (1 - cos(pi * 5 * 1e-3))
    assert m.position_max == pytest.approx(A, rel=1.3e-4)
    assert m.torque_effort == pytest.approx(3.0)
    assert m.convergence_speed == math.inf  # still leaving the 2 mm band at the end


def test_convergence_speed_last_entry():
    tr = synthetic()
    xe = np.where(tr.t < 0.3, 0.01, 0.0)
    xe[600] = 0.01  # re-exit at t=0.6
    tr.data[:, COLUMNS.index("xe1")] = xe
    m = compute_metrics(tr, band=0.02)
    assert m.convergence_speed == pytest.approx(0.601)


def test_metrics_window():
    tr = synthetic()
    tr.data[:, COLUMNS.index("xe1")] = np.where(tr.t < 0.5, 1.0, 0.0)
    assert compute_metrics(tr, window=(0.6, 1.0)).position_rms == 0.0


def test_metrics_table_rows():
    m = Metrics(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0)
    table = metrics_table({"DRS-BLF Control": m, "PID Control": m})
    lines = table.splitlines()
    assert lines[0].split("  ")[0] == "Convergence Criteria"
    labels = [ln.split("  ")[0] for ln in lines[2:]]
    assert labels == ["Position error (m)", "Velocity error (m/s)", "Torque effort (N.m)",
                      "Convergence speed (s)"]
    # identical controllers give identical columns
    for ln in lines[2:]:
        cells = ln.split()
        assert cells[-1] == cells[-2]


def test_key_value_block():
    block = Metrics(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0).key_value_block()
    kv = dict(line.split("=") for line in block.splitlines())
    assert float(kv["position_rms"]) == 0.1
    assert kv["violations"] == "0"


def test_invariants_pass_on_clean_trace(short_trace):
    rep = check_trace_invariants(short_trace)
    assert rep.passed, rep.failures


def test_invariants_fault_injection_reports_earliest():
    tr = synthetic()
    tr.data[700, COLUMNS.index("x2")] = 0.5      # chi2 = 0.2
    tr.data[300, COLUMNS.index("e1")] = 0.05     # rho1 = 0.02
    tr.data[800, COLUMNS.index("th3")] = 0.0
    rep = check_trace_invariants(tr, max_failures=2)
    assert not rep.passed
    assert rep.total_failures == 3 and len(rep.failures) == 2
    first = rep.first_failure
    assert (first["check"], first["subsystem"]) == ("barrier", 1)
    assert first["time"] == pytest.approx(0.3)
    assert first["value"] == 0.05


def test_invariants_flag_saturation_breach():
    tr = synthetic()
    tr.data[10, COLUMNS.index("u3")] = 500.0
    rep = check_trace_invariants(tr)
    assert rep.first_failure["check"] == "saturation"
    assert rep.first_failure["subsystem"] == 3


def test_numerical_failure_attaches_partial_trace(desk):
    from emla_ctrl.plant import LoadProfile, Step
    load = LoadProfile(disturbances=(None, Step(0.01, math.inf), None, None))
    with pytest.raises(NumericalError) as info:
        run(desk.with_(load=load, duration=0.05, controller="pid"))
    tr = info.value.trace
    assert tr is not None and tr.event
    assert 0 < len(tr) <= 12


def test_substeps_change_values_not_record_count(desk):
    base = desk.with_(duration=0.5)
    coarse, fine = run(base.with_(substeps=2)), run(base.with_(substeps=8))
    assert len(coarse) == len(fine) == 501
    # both runs resolve the electrical dynamics; they agree far below the tracking error
    diff = np.max(np.abs(coarse.xe[:, 0] - fine.xe[:, 0]))
    assert diff < 1e-3 * desk.envelope.rho[0]
