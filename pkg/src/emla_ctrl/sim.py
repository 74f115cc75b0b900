"""Fixed-step closed-loop simulation, traces and tracking metrics.

At every control tick the simulator samples the references, evaluates the
selected controller on the (optionally noisy) measured state, holds the
saturated voltages, and integrates the plant with ``substeps`` RK4 steps.
Traces are recorded at the control rate.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .controller import (AdaptiveState, ControllerGains, PIDGains, PIDState, SafetyEnvelope,
                         drs_blf_step, envelope_check, pid_step)
from .exceptions import BarrierViolation, NumericalError
from .plant import ActuatorLimits, LoadProfile, PlantParams, PlantState, plant_rhs
from .trajectory import PiecewiseTrajectory, evaluate

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "x1", "x2", "x3", "x4", "x1d", "x2d", "x3d", "x4d", "e1", "e2", "e3", "e4",
               "u1", "u2_raw", "u2", "u3_raw", "u3", "u4_raw", "u4",
               "th1", "th2", "th3", "th4", "FL", "flags")
_EXTRA = ("xe1", "xe2", "xe3", "xe4", "m1", "m2", "m3", "m4")
COLUMNS = CSV_COLUMNS[:-1] + _EXTRA + ("flags",)
_IDX = {name: i for i, name in enumerate(COLUMNS)}

# bit flags stored per sample
FLAG_SAT_U2 = 1 << 0
FLAG_SAT_U3 = 1 << 1
FLAG_SAT_U4 = 1 << 2
FLAG_CLAMP = (1 << 3, 1 << 4, 1 << 5, 1 << 6)  # e1..e4 barrier clamped
FLAG_REF_HOLD = 1 << 7   # reference sampled past the trajectory end
FLAG_VIOLATION = 1 << 8  # some |e_j| >= rho_j or |x_j| >= chi_j

CONTROLLERS = ("drsblf", "pid")


@dataclass(frozen=True)
class Scenario:
    """Everything needed for one closed-loop run."""

    params: PlantParams
    trajectory: PiecewiseTrajectory
    envelope: SafetyEnvelope
    limits: ActuatorLimits
    duration: float
    load: LoadProfile = LoadProfile()
    controller: str = "drsblf"
    gains: ControllerGains = ControllerGains()
    pid_gains: PIDGains = PIDGains()
    control_rate: float = 1000.0
    substeps: int = 4
    initial_state: PlantState = PlantState()
    theta0: tuple = (1.0, 1.0, 1.0, 1.0)
    policy: str = "abort"
    measurement_noise: tuple = (0.0, 0.0, 0.0, 0.0)
    seed: int = 0
    convergence_band: float = 0.02

    def __post_init__(self):
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ValueError(f"duration must be > 0, got {self.duration!r}")
        if not (self.control_rate > 0 and math.isfinite(self.control_rate)):
            raise ValueError(f"control_rate must be > 0, got {self.control_rate!r}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError(f"substeps must be an integer >= 1, got {self.substeps!r}")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.policy not in ("abort", "clamp"):
            raise ValueError(f"policy must be 'abort' or 'clamp', got {self.policy!r}")
        if len(self.theta0) != 4 or not all(th > 0 for th in self.theta0):
            raise ValueError("theta0 needs four positive values")
        if len(self.measurement_noise) != 4 or any(s < 0 for s in self.measurement_noise):
            raise ValueError("measurement_noise needs four non-negative values")
        object.__setattr__(self, "initial_state", PlantState(*self.initial_state))

    @property
    def dt(self):
        return 1.0 / self.control_rate

    @property
    def n_steps(self):
        return int(round(self.duration * self.control_rate))

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class SimulationTrace:
    """Samples recorded at the control rate; one row per tick.

    ``data`` has one column per entry of :data:`COLUMNS`. ``event`` describes an
    aborted run (barrier violation or numerical failure), else ``None``.
    """

    data: np.ndarray
    controller: str
    envelope: SafetyEnvelope
    limits: ActuatorLimits
    duration: float
    event: Optional[str] = None
    envelope_report: object = None

    def __len__(self):
        return self.data.shape[0]

    def col(self, name):
        return self.data[:, _IDX[name]]

    def cols(self, *names):
        return self.data[:, [_IDX[n] for n in names]]

    @property
    def t(self):
        return self.col("t")

    @property
    def x(self):
        return self.cols("x1", "x2", "x3", "x4")

    @property
    def xd(self):
        return self.cols("x1d", "x2d", "x3d", "x4d")

    @property
    def xe(self):
        """True tracking errors ``x - xd`` (measurement noise excluded)."""
        return self.cols("xe1", "xe2", "xe3", "xe4")

    @property
    def e(self):
        return self.cols("e1", "e2", "e3", "e4")

    @property
    def theta(self):
        return self.cols("th1", "th2", "th3", "th4")

    @property
    def margin(self):
        return self.cols("m1", "m2", "m3", "m4")

    @property
    def flags(self):
        return self.col("flags").astype(np.int64)

    @property
    def aborted(self):
        return self.event is not None

    def to_csv(self, path_or_buf=None):
        """Write the fixed-column CSV; floats use shortest round-trip repr."""
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        idx = [_IDX[c] for c in CSV_COLUMNS[:-1]]
        flags = self.flags
        for row, fl in zip(self.data[:, idx].tolist(), flags.tolist()):
            buf.write(",".join(map(repr, row)) + f",{fl}\n")
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return text


def rk4_step(f, t, y, h):
    """Classical fourth-order Runge-Kutta step for ``dy/dt = f(t, y)``.

    ``y`` is a sequence of floats; the result is a tuple. Inputs driving ``f``
    are held constant across the step by the caller.

    Raises
    ------
    NumericalError
        If the updated state is non-finite.
    """
    h2 = 0.5 * h
    k1 = f(t, y)
    k2 = f(t + h2, [a + h2 * b for a, b in zip(y, k1)])
    k3 = f(t + h2, [a + h2 * b for a, b in zip(y, k2)])
    k4 = f(t + h, [a + h * b for a, b in zip(y, k3)])
    h6 = h / 6.0
    out = tuple(a + h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))
    for j, v in enumerate(out):
        if not math.isfinite(v):
            raise NumericalError(f"RK4 step produced non-finite state component {j + 1}: {v!r}",
                                 subsystem=j + 1, time=t)
    return out


def plant_stepper(params: PlantParams, load: LoadProfile, h, substeps):
    """Return ``advance(t, state, u_q, u_d)``: ``substeps`` RK4 steps of size ``h``.

    Same arithmetic as :func:`rk4_step` on the plant model, unrolled for the
    four states because this is the simulator's inner loop.
    """
    rhs = plant_rhs(params)
    force = load.force
    dist = load.disturbance if load.has_disturbance else None
    h2, h6 = 0.5 * h, h / 6.0

    def f(t, a, b, c, d, u_q, u_d, load_force):
        k = rhs(a, b, c, d, u_q, u_d, load_force)
        if dist is None:
            return k
        w = dist(t)
        return (k[0] + w[0], k[1] + w[1], k[2] + w[2], k[3] + w[3])

    def advance(t, state, u_q, u_d):
        x1, x2, x3, x4 = state
        for s in range(substeps):
            ts = t + s * h
            fa, fb, fd = force(ts), force(ts + h2), force(ts + h)
            a1, a2, a3, a4 = f(ts, x1, x2, x3, x4, u_q, u_d, fa)
            b1, b2, b3, b4 = f(ts + h2, x1 + h2 * a1, x2 + h2 * a2, x3 + h2 * a3, x4 + h2 * a4, u_q, u_d, fb)
            c1, c2, c3, c4 = f(ts + h2, x1 + h2 * b1, x2 + h2 * b2, x3 + h2 * b3, x4 + h2 * b4, u_q, u_d, fb)
            d1, d2, d3, d4 = f(ts + h, x1 + h * c1, x2 + h * c2, x3 + h * c3, x4 + h * c4, u_q, u_d, fd)
            x1 += h6 * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
            x2 += h6 * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
            x3 += h6 * (a3 + 2.0 * b3 + 2.0 * c3 + d3)
            x4 += h6 * (a4 + 2.0 * b4 + 2.0 * c4 + d4)
            if not (math.isfinite(x1) and math.isfinite(x2) and math.isfinite(x3) and math.isfinite(x4)):
                bad = [j + 1 for j, v in enumerate((x1, x2, x3, x4)) if not math.isfinite(v)]
                raise NumericalError(f"RK4 step produced non-finite state component {bad[0]}",
                                     subsystem=bad[0], time=ts)
        return (x1, x2, x3, x4)

    return advance


def reference_envelope_report(scenario: Scenario):
    """Check the scenario's references against its envelope before running."""
    n = scenario.n_steps
    times = np.arange(n + 1) * scenario.dt
    samples = scenario.trajectory.sample(times)
    lim = scenario.limits.torque
    x3d_bound = max(abs(lim.lower), abs(lim.upper)) / scenario.params.torque_constant
    return envelope_check(times, samples[:, 0], scenario.envelope, x3d_bound=x3d_bound)


def run(scenario: Scenario) -> SimulationTrace:
    """Run the closed loop for ``scenario.duration`` seconds.

    Returns
    -------
    SimulationTrace
        ``duration * control_rate + 1`` samples.

    Raises
    ------
    BarrierViolation
        Under the ``abort`` policy; ``exc.time`` and ``exc.trace`` (partial
        trace) are filled in.
    NumericalError
        If the plant state becomes non-finite; ``exc.trace`` is filled in.
    """
    sc = scenario
    params, traj, load, env = sc.params, sc.trajectory, sc.load, sc.envelope
    dt = sc.dt
    h = dt / sc.substeps
    n = sc.n_steps
    rho, chi = env.rho, env.chi

    env_report = reference_envelope_report(sc)
    if not env_report.passed:
        log.warning("references exceed the safety envelope:\n%s", env_report.summary())

    if sc.controller == "drsblf":
        warn = sc.gains.discrete_warnings(dt)
        if warn:
            log.info("beta*kappa*dt >= 1 in subsystems %s; adaptation settles within one period", warn)

    rng = np.random.default_rng(sc.seed)
    noise = sc.measurement_noise
    noisy = any(s > 0 for s in noise)

    advance = plant_stepper(params, load, h, sc.substeps)

    state = tuple(float(v) for v in sc.initial_state)
    adaptive = AdaptiveState(tuple(float(v) for v in sc.theta0), 0.0)
    pid_state = PIDState()
    rows = []

    def finish(event=None):
        data = np.array(rows, dtype=float) if rows else np.empty((0, len(COLUMNS)))
        return SimulationTrace(data, sc.controller, env, sc.limits, sc.duration, event, env_report)

    for k in range(n + 1):
        t = k * dt
        ref = evaluate(traj, t)
        meas = state
        if noisy:
            meas = tuple(v + s * rng.standard_normal() if s > 0 else v for v, s in zip(state, noise))
        try:
            if sc.controller == "drsblf":
                out, adaptive = drs_blf_step(meas, (ref.position, ref.velocity), sc.limits, env,
                                             sc.gains, adaptive, dt, params, sc.policy)
            else:
                out, pid_state = pid_step(meas, (ref.position, ref.velocity), sc.limits,
                                          sc.pid_gains, pid_state, dt, params)
        except BarrierViolation as exc:
            exc.time = t
            exc.trace = finish(str(exc))
            raise
        except NumericalError as exc:
            err = NumericalError(f"{exc} (t={t:.6g} s)", exc.subsystem, t)
            err.trace = finish(str(err))
            raise err from exc

        flags = 0
        if out.saturated[0]:
            flags |= FLAG_SAT_U2
        if out.saturated[1]:
            flags |= FLAG_SAT_U3
        if out.saturated[2]:
            flags |= FLAG_SAT_U4
        for j in range(4):
            if out.clamped[j]:
                flags |= FLAG_CLAMP[j]
            if abs(out.e[j]) >= rho[j] or abs(state[j]) >= chi[j]:
                flags |= FLAG_VIOLATION
        if ref.clamped:
            flags |= FLAG_REF_HOLD
        f_l = load.force(t)
        rows.append((t,) + state + out.xd + out.e
                    + (out.u1, out.u2_raw, out.u2, out.u3_raw, out.u3, out.u4_raw, out.u4)
                    + out.theta + (f_l,) + tuple(a - b for a, b in zip(state, out.xd))
                    + out.margin + (flags,))
        if k == n:
            break
        try:
            state = advance(t, state, out.u3, out.u4)
        except NumericalError as exc:
            when = t if exc.time is None else exc.time
            err = NumericalError(f"{exc} (t={when:.6g} s)", exc.subsystem, when)
            err.trace = finish(str(err))
            raise err from exc
    return finish()


# ---------------------------------------------------------------------------
# metrics and invariant checks

@dataclass
class Metrics:
    position_rms: float
    position_max: float
    velocity_rms: float
    velocity_max: float
    torque_effort: float
    convergence_speed: float
    violations: int

    ROWS = (("Position error (m)", "position_rms"),
            ("Velocity error (m/s)", "velocity_rms"),
            ("Torque effort (N.m)", "torque_effort"),
            ("Convergence speed (s)", "convergence_speed"))

    def as_dict(self):
        return {k: getattr(self, k) for k in ("position_rms", "position_max", "velocity_rms",
                                             "velocity_max", "torque_effort", "convergence_speed",
                                             "violations")}

    def key_value_block(self):
        return "\n".join(f"{k}={v!r}" for k, v in self.as_dict().items())


def _rms(v):
    return float(np.sqrt(np.mean(np.square(v)))) if len(v) else 0.0


def compute_metrics(trace: SimulationTrace, band=0.02, window=None) -> Metrics:
    """Tracking summary of a trace.

    Parameters
    ----------
    band : float
        Convergence band as a fraction of the peak reference position.
    window : (t_from, t_to), optional
        Restricts the RMS/max/effort statistics; convergence is always measured
        over the whole trace, from its first sample.

    Notes
    -----
    Convergence speed is the time after which ``|x1 - x1d|`` enters the band and
    never leaves it again (``inf`` if it is outside at the last sample).
    """
    if len(trace) == 0:
        raise ValueError("cannot compute metrics of an empty trace")
    t = trace.t
    xe = trace.xe
    mask = np.ones(len(t), dtype=bool)
    if window is not None:
        lo, hi = window
        mask = (t >= lo) & (t <= hi)
    pos, vel, u2 = xe[mask, 0], xe[mask, 1], trace.col("u2")[mask]

    tol = band * float(np.max(np.abs(trace.col("x1d"))))
    outside = np.nonzero(np.abs(xe[:, 0]) > tol)[0]
    if outside.size == 0:
        conv = 0.0
    elif outside[-1] == len(t) - 1:
        conv = math.inf
    else:
        conv = float(t[outside[-1] + 1] - t[0])

    return Metrics(
        position_rms=_rms(pos), position_max=float(np.max(np.abs(pos), initial=0.0)),
        velocity_rms=_rms(vel), velocity_max=float(np.max(np.abs(vel), initial=0.0)),
        torque_effort=_rms(u2), convergence_speed=conv,
        violations=int(np.count_nonzero(trace.flags & FLAG_VIOLATION)),
    )


def metrics_table(columns: dict) -> str:
    """Aligned text table, one column per controller label."""
    labels = list(columns)
    head = ["Convergence Criteria"] + labels
    rows = [[name] + [f"{getattr(columns[c], attr):.4g}" for c in labels]
            for name, attr in Metrics.ROWS]
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    fmt = lambda r: "  ".join(s.ljust(w) if i == 0 else s.rjust(w)
                              for i, (s, w) in enumerate(zip(r, widths)))
    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([fmt(head), sep] + [fmt(r) for r in rows])


@dataclass
class InvariantReport:
    passed: bool = True
    failures: list = field(default_factory=list)
    clamped_samples: int = 0
    checked_samples: int = 0
    total_failures: int = 0

    @property
    def first_failure(self):
        return self.failures[0] if self.failures else None


def check_trace_invariants(trace: SimulationTrace, envelope: SafetyEnvelope = None,
                           limits: ActuatorLimits = None, max_failures=20) -> InvariantReport:
    """Verify state, error, adaptive-gain and saturation bounds at every sample.

    Barrier checks ``|e_j| < rho_j`` skip samples whose ``e_j`` was clamped;
    those samples are counted in ``clamped_samples``. Adaptive gains are only
    checked for DRS-BLF traces.
    """
    env = envelope or trace.envelope
    lim = limits or trace.limits
    rep = InvariantReport(checked_samples=len(trace))
    t, x, e, th = trace.t, trace.x, trace.e, trace.theta
    flags = trace.flags

    def fail(check, j, k, value, bound):
        rep.failures.append(dict(check=check, subsystem=j, time=float(t[k]),
                                 value=float(value), bound=float(bound)))

    clamped_any = np.zeros(len(t), dtype=bool)
    for j in range(4):
        bad = np.nonzero(~(np.abs(x[:, j]) < env.chi[j]))[0]
        for k in bad:
            fail("state_bound", j + 1, k, x[k, j], env.chi[j])
        clamped = (flags & FLAG_CLAMP[j]) != 0
        clamped_any |= clamped
        bad = np.nonzero(~(np.abs(e[:, j]) < env.rho[j]) & ~clamped)[0]
        for k in bad:
            fail("barrier", j + 1, k, e[k, j], env.rho[j])
        if trace.controller == "drsblf":
            for k in np.nonzero(~(th[:, j] > 0))[0]:
                fail("theta_positive", j + 1, k, th[k, j], 0.0)
    for name, j, chan in (("u2", 2, lim.torque), ("u3", 3, lim.voltage_q), ("u4", 4, lim.voltage_d)):
        v = trace.col(name)
        for k in np.nonzero((v < chan.lower) | (v > chan.upper))[0]:
            fail("saturation", j, k, v[k], chan.upper if v[k] > chan.upper else chan.lower)
    rep.clamped_samples = int(np.count_nonzero(clamped_any))
    rep.failures.sort(key=lambda d: (d["time"], d["subsystem"]))
    rep.passed = not rep.failures
    rep.total_failures = len(rep.failures)
    del rep.failures[max_failures:]
    return rep
