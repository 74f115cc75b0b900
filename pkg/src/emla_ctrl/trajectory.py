"""Piecewise quintic reference trajectories.

Each segment is a fifth-order polynomial fitted to position, velocity and
acceleration at both ends, so chaining segments through shared waypoints gives
a C2 reference whose jerk is a bounded quadratic on every segment.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .exceptions import TrajectoryError


class WaypointCondition(NamedTuple):
    """Boundary condition at time ``t``."""

    t: float
    position: float
    velocity: float = 0.0
    acceleration: float = 0.0


class Sample(NamedTuple):
    position: float
    velocity: float
    acceleration: float
    jerk: float
    clamped: bool = False


def _boundary_matrix(t0, t1):
    rows = []
    for t in (t0, t1):
        rows.append([1.0, t, t**2, t**3, t**4, t**5])
        rows.append([0.0, 1.0, 2 * t, 3 * t**2, 4 * t**3, 5 * t**4])
        rows.append([0.0, 0.0, 2.0, 6 * t, 12 * t**2, 20 * t**3])
    # row order: pos(t0), vel(t0), acc(t0), pos(t1), vel(t1), acc(t1)
    return np.array(rows)


@dataclass(frozen=True)
class QuinticSegment:
    """Quintic on ``[t_start, t_end]``, coefficients in local time ``tau = t - t_start``.

    ``coeffs[k]`` multiplies ``tau**k``.
    """

    coeffs: tuple
    t_start: float
    t_end: float

    @property
    def duration(self):
        return self.t_end - self.t_start

    def evaluate(self, t):
        c0, c1, c2, c3, c4, c5 = self.coeffs
        s = t - self.t_start
        pos = c0 + s * (c1 + s * (c2 + s * (c3 + s * (c4 + s * c5))))
        vel = c1 + s * (2 * c2 + s * (3 * c3 + s * (4 * c4 + s * 5 * c5)))
        acc = 2 * c2 + s * (6 * c3 + s * (12 * c4 + s * 20 * c5))
        jerk = 6 * c3 + s * (24 * c4 + s * 60 * c5)
        return pos, vel, acc, jerk

    def max_abs_jerk(self):
        """Analytic maximum of ``|jerk|`` over the closed segment."""
        _, _, c2, c3, c4, c5 = self.coeffs
        T = self.duration
        candidates = [0.0, T]
        if c5 != 0.0:
            s_star = -24 * c4 / (120 * c5)  # vertex of the jerk parabola
            if 0.0 < s_star < T:
                candidates.append(s_star)
        return max(abs(6 * c3 + s * (24 * c4 + s * 60 * c5)) for s in candidates)


def solve_quintic_segment(start: WaypointCondition, end: WaypointCondition) -> QuinticSegment:
    """Fit the quintic matching both boundary conditions.

    The 6x6 boundary system is solved by LU with partial pivoting in local,
    length-normalized time, then rescaled to local time ``tau = t - t_start``.

    Raises
    ------
    TrajectoryError
        If ``end.t <= start.t``, a value is non-finite, or the system is
        numerically singular.
    """
    values = tuple(start) + tuple(end)
    if not all(math.isfinite(v) for v in values):
        raise TrajectoryError(f"non-finite waypoint data: {start}, {end}")
    if not end.t > start.t:
        raise TrajectoryError(f"degenerate segment: end time {end.t} <= start time {start.t}")
    T = end.t - start.t
    # normalized time sigma = tau / T keeps the matrix independent of T
    A = _boundary_matrix(0.0, 1.0)
    b = np.array([start.position, start.velocity * T, start.acceleration * T**2,
                  end.position, end.velocity * T, end.acceleration * T**2])
    try:
        a = scipy.linalg.lu_solve(scipy.linalg.lu_factor(A), b)
    except scipy.linalg.LinAlgError as exc:
        raise TrajectoryError(f"singular boundary system on [{start.t}, {end.t}]: {exc}") from exc
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        coeffs = a / T ** np.arange(6)
    if not np.all(np.isfinite(coeffs)):
        raise TrajectoryError(f"numerically singular segment on [{start.t}, {end.t}]")
    return QuinticSegment(tuple(float(c) for c in coeffs), float(start.t), float(end.t))


@dataclass(frozen=True)
class PiecewiseTrajectory:
    """Contiguous chain of quintic segments."""

    segments: tuple

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise TrajectoryError("trajectory has no segments")
        for a, b in zip(segs, segs[1:]):
            if a.t_end != b.t_start:
                raise TrajectoryError(f"segments not contiguous at t={a.t_end} / {b.t_start}")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_starts", tuple(s.t_start for s in segs))

    @property
    def t_start(self):
        return self.segments[0].t_start

    @property
    def t_end(self):
        return self.segments[-1].t_end

    @property
    def duration(self):
        return self.t_end - self.t_start

    def knots(self):
        return (self.t_start,) + tuple(s.t_end for s in self.segments)

    def max_abs_jerk(self):
        return max(s.max_abs_jerk() for s in self.segments)

    def sample(self, times):
        """Evaluate on an array of times; returns an ``(n, 4)`` array."""
        return np.array([evaluate(self, t)[:4] for t in np.asarray(times, dtype=float)])


def evaluate(traj: PiecewiseTrajectory, t) -> Sample:
    """Position, velocity, acceleration and jerk at time ``t``.

    Outside ``[t_start, t_end]`` the nearest endpoint position is held with
    zero derivatives and the sample is flagged ``clamped``.
    """
    if traj is None or not traj.segments:
        raise TrajectoryError("cannot evaluate an empty trajectory")
    segs = traj.segments
    if t < segs[0].t_start:
        pos = segs[0].evaluate(segs[0].t_start)[0]
        return Sample(pos, 0.0, 0.0, 0.0, True)
    if t > segs[-1].t_end:
        pos = segs[-1].evaluate(segs[-1].t_end)[0]
        return Sample(pos, 0.0, 0.0, 0.0, True)
    i = bisect.bisect_right(traj._starts, t) - 1
    return Sample(*segs[max(i, 0)].evaluate(t), False)


def build_piecewise(waypoints: Sequence[WaypointCondition]) -> PiecewiseTrajectory:
    """Chain one quintic per adjacent waypoint pair.

    Velocities and accelerations at interior waypoints are taken as given, so
    adjacent segments share their boundary conditions exactly.
    """
    wps = [WaypointCondition(*w) for w in waypoints]
    if len(wps) < 2:
        raise TrajectoryError(f"need at least 2 waypoints, got {len(wps)}")
    for k, (a, b) in enumerate(zip(wps, wps[1:])):
        if not b.t > a.t:
            raise TrajectoryError(f"waypoint times must be strictly increasing: "
                                  f"waypoint {k + 2} (t={b.t}) follows t={a.t}")
    return PiecewiseTrajectory(tuple(solve_quintic_segment(a, b) for a, b in zip(wps, wps[1:])))
