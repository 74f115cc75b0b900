"""
Planning a jerk-bounded stroke
==============================

Chain quintic segments through a handful of waypoints and look at what the
controller will be asked to follow.
"""

import numpy as np

from emla_ctrl.trajectory import WaypointCondition, build_piecewise, evaluate

# Forward stroke of 10 cm, a hold, and the return. Velocity and acceleration
# at every waypoint are zero, so each segment is the rest-to-rest quintic.
waypoints = [WaypointCondition(0.0, 0.0, 0.0, 0.0),
             WaypointCondition(3.0, 0.1, 0.0, 0.0),
             WaypointCondition(6.0, 0.1, 0.0, 0.0),
             WaypointCondition(9.0, 0.0, 0.0, 0.0)]
traj = build_piecewise(waypoints)

# The first segment in normalized time is 10 s^3 - 15 s^4 + 6 s^5, scaled by
# the 0.1 m stroke and the 3 s duration.
print("coefficients of the first segment:", np.round(traj.segments[0].coeffs, 6))

# Peak speed is reached halfway through the stroke: 1.875 * 0.1 / 3.
mid = evaluate(traj, 1.5)
print(f"speed at mid-stroke: {mid.velocity:.5f} m/s")

# Jerk is a parabola on each segment, so its bound is found analytically.
print(f"max |jerk|: {traj.max_abs_jerk():.5f} m/s^3")

# Sample at the 1 kHz control rate; columns are pos, vel, acc, jerk.
t = np.arange(0.0, 9.0 + 1e-9, 1e-3)
profile = traj.sample(t)
print("samples:", profile.shape, " peak acceleration:", np.abs(profile[:, 2]).max())
