import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emla_ctrl.exceptions import TrajectoryError
from emla_ctrl.trajectory import (PiecewiseTrajectory, WaypointCondition, build_piecewise,
                                  evaluate, solve_quintic_segment)


def direct_solve(t0, t1, b):
    """Independent oracle: monomial boundary system in absolute time, numpy solve."""
    rows = []
    for t in (t0, t1):
        rows.append([t**k for k in range(6)])
        rows.append([k * t ** (k - 1) if k >= 1 else 0.0 for k in range(6)])
        rows.append([k * (k - 1) * t ** (k - 2) if k >= 2 else 0.0 for k in range(6)])
    return np.linalg.solve(np.array(rows), np.array(b, dtype=float))


def test_rest_to_rest_unit_coefficients():
    seg = solve_quintic_segment(WaypointCondition(0.0, 0.0), WaypointCondition(1.0, 1.0))
    assert seg.coeffs == pytest.approx((0, 0, 0, 10, -15, 6), abs=1e-9)
    oracle = direct_solve(0.0, 1.0, [0, 0, 0, 1, 0, 0])
    assert np.asarray(seg.coeffs) == pytest.approx(oracle, abs=1e-9)


def test_rest_to_rest_midpoint():
    seg = solve_quintic_segment(WaypointCondition(0.0, 0.0), WaypointCondition(1.0, 1.0))
    pos, vel, acc, _ = seg.evaluate(0.5)
    assert pos == pytest.approx(0.5, abs=1e-12)
    assert vel == pytest.approx(1.875, abs=1e-12)
    assert acc == pytest.approx(0.0, abs=1e-12)


def test_max_jerk_of_unit_quintic():
    # jerk = 60 - 360 s + 360 s^2 peaks at the segment ends
    seg = solve_quintic_segment(WaypointCondition(0.0, 0.0), WaypointCondition(1.0, 1.0))
    assert seg.max_abs_jerk() == pytest.approx(60.0, rel=1e-12)


def test_shifted_segment_matches_oracle():
    a = WaypointCondition(2.0, 0.3, -0.1, 0.5)
    b = WaypointCondition(3.5, -0.2, 0.4, -1.0)
    seg = solve_quintic_segment(a, b)
    oracle = direct_solve(2.0, 3.5, [0.3, -0.1, 0.5, -0.2, 0.4, -1.0])
    ts = np.linspace(2.0, 3.5, 7)
    ours = [seg.evaluate(t)[0] for t in ts]
    ref = [np.polyval(oracle[::-1], t) for t in ts]
    assert ours == pytest.approx(ref, abs=1e-9)


def test_degenerate_segment_rejected():
    with pytest.raises(TrajectoryError):
        solve_quintic_segment(WaypointCondition(1.0, 0.0), WaypointCondition(1.0, 1.0))
    with pytest.raises(TrajectoryError):
        solve_quintic_segment(WaypointCondition(0.0, np.nan), WaypointCondition(1.0, 1.0))


def test_build_rejects_unordered_and_short():
    with pytest.raises(TrajectoryError):
        build_piecewise([(0.0, 0.0), (2.0, 1.0), (1.0, 0.5)])
    with pytest.raises(TrajectoryError):
        build_piecewise([(0.0, 0.0)])


def test_three_waypoints_give_two_segments():
    traj = build_piecewise([(0.0, 0.0), (1.0, 0.1), (3.0, 0.0)])
    assert len(traj.segments) == 2
    assert traj.knots() == (0.0, 1.0, 3.0)
    assert traj.duration == 3.0


def test_evaluation_outside_range_holds_endpoint():
    traj = build_piecewise([(0.0, 0.0), (1.0, 0.1)])
    after = evaluate(traj, 2.0)
    assert after.clamped
    assert after.position == pytest.approx(0.1)
    assert after[1:4] == (0.0, 0.0, 0.0)
    before = evaluate(traj, -1.0)
    assert before.clamped and before.position == pytest.approx(0.0)
    assert not evaluate(traj, 1.0).clamped


def test_non_contiguous_segments_rejected():
    s1 = solve_quintic_segment(WaypointCondition(0.0, 0.0), WaypointCondition(1.0, 1.0))
    s2 = solve_quintic_segment(WaypointCondition(1.5, 1.0), WaypointCondition(2.0, 0.0))
    with pytest.raises(TrajectoryError):
        PiecewiseTrajectory((s1, s2))


def test_sample_shape():
    traj = build_piecewise([(0.0, 0.0), (1.0, 1.0)])
    out = traj.sample(np.linspace(0, 1, 11))
    assert out.shape == (11, 4)


waypoint_lists = st.lists(
    st.tuples(st.floats(0.05, 3.0), st.floats(-1.0, 1.0), st.floats(-2.0, 2.0), st.floats(-5.0, 5.0)),
    min_size=2, max_size=8)


@settings(max_examples=60, deadline=None)
@given(waypoint_lists)
def test_boundary_conditions_and_c2_continuity(raw):
    t, wps = 0.0, []
    for dt, p, v, a in raw:
        wps.append(WaypointCondition(t, p, v, a))
        t += dt
    traj = build_piecewise(wps)
    for seg, a, b in zip(traj.segments, wps, wps[1:]):
        assert seg.evaluate(a.t)[:3] == pytest.approx(a[1:], abs=1e-9)
        assert seg.evaluate(b.t)[:3] == pytest.approx(b[1:], abs=1e-9)
    for s1, s2 in zip(traj.segments, traj.segments[1:]):
        assert s1.evaluate(s1.t_end)[:3] == pytest.approx(s2.evaluate(s2.t_start)[:3], abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 20.0), st.floats(-1.0, 1.0))
def test_max_jerk_bounds_sampled_jerk(T, dp):
    seg = solve_quintic_segment(WaypointCondition(0.0, 0.0, 0.3, 0.0),
                                WaypointCondition(T, dp, 0.0, -0.2))
    sampled = max(abs(seg.evaluate(t)[3]) for t in np.linspace(0, T, 401))
    assert sampled <= seg.max_abs_jerk() * (1 + 1e-12) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6), st.floats(0.1, 5.0),
       st.floats(-200.0, 200.0))
def test_time_shift_invariance(vals, T, c):
    p0, v0, a0, p1, v1, a1 = vals
    seg = solve_quintic_segment(WaypointCondition(0.0, p0, v0, a0), WaypointCondition(T, p1, v1, a1))
    moved = solve_quintic_segment(WaypointCondition(c, p0, v0, a0),
                                  WaypointCondition(c + T, p1, v1, a1))
    for s in np.linspace(0.0, T, 9):
        assert moved.evaluate(c + s) == pytest.approx(seg.evaluate(s), rel=1e-9, abs=1e-9)
