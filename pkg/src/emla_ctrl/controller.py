"""Barrier-Lyapunov adaptive cascade controller and a cascade PID baseline.

The DRS-BLF cascade runs one barrier-adaptive law per subsystem::

    position  -> virtual velocity correction u1
    velocity  -> torque command u2        (saturated)
    q current -> q-axis voltage u3        (saturated)
    d current -> d-axis voltage u4        (saturated)

Each law is ``u_j = -(eps_j * e_j + zeta_j * theta_j * phi_j) / 2`` with the
barrier term ``phi_j = e_j / (rho_j**2 - e_j**2)`` and the adaptive gain
``theta_j`` driven by ``dtheta/dt = -beta_j kappa_j theta_j + zeta_j beta_j phi_j**2 / 2``.
The q-axis current reference is derived from the saturated torque command and
the d-axis current reference is zero.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field, fields
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import BarrierViolation, NumericalError
from .plant import ActuatorLimits, PlantParams, reference_q_current, saturate

log = logging.getLogger(__name__)

# smallest positive normal double; keeps theta > 0 when exp decay underflows
THETA_FLOOR = sys.float_info.min
# barrier denominator floor (relative to rho**2) under the clamp policy
CLAMP_FRACTION = 1e-9

POLICIES = ("abort", "clamp")


def _four(values, name):
    vals = tuple(float(v) for v in values)
    if len(vals) != 4:
        raise ValueError(f"{name} needs 4 values (one per subsystem), got {len(vals)}")
    return vals


@dataclass(frozen=True)
class SafetyEnvelope:
    """State bounds ``chi_j`` and reference bounds ``lam_j``; error budget ``rho = chi - lam``."""

    chi: tuple
    lam: tuple

    def __post_init__(self):
        chi = _four(self.chi, "chi")
        lam = _four(self.lam, "lambda")
        for j, (c, l) in enumerate(zip(chi, lam), start=1):
            if not (math.isfinite(c) and 0.0 < l < c):
                raise ValueError(f"subsystem {j}: need 0 < lambda < chi, got lambda={l}, chi={c}")
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "lam", lam)

    @property
    def rho(self):
        return tuple(c - l for c, l in zip(self.chi, self.lam))


# Gains reported as optimal for the physical rig
PAPER_GAINS = dict(
    beta=(11.2, 19.8, 4.75, 7.1),
    kappa=(98.0, 76.0, 24.0, 48.0),
    zeta=(0.002, 0.001, 0.0001, 0.0021),
    eps=(0.005, 0.008, 0.001, 0.003),
)


@dataclass(frozen=True)
class ControllerGains:
    """The 16 positive DRS-BLF gains, four per subsystem.

    Vector layout (see :meth:`to_vector`) is ``beta1..4, kappa1..4, zeta1..4, eps1..4``.
    """

    beta: tuple = PAPER_GAINS["beta"]
    kappa: tuple = PAPER_GAINS["kappa"]
    zeta: tuple = PAPER_GAINS["zeta"]
    eps: tuple = PAPER_GAINS["eps"]

    GROUPS = ("beta", "kappa", "zeta", "eps")

    def __post_init__(self):
        for name in self.GROUPS:
            vals = _four(getattr(self, name), name)
            for j, v in enumerate(vals, start=1):
                if not (math.isfinite(v) and v > 0):
                    raise ValueError(f"gain {name}{j} must be finite and > 0, got {v!r}")
            object.__setattr__(self, name, vals)

    @classmethod
    def names(cls):
        return [f"{g}{j}" for g in cls.GROUPS for j in range(1, 5)]

    def to_vector(self):
        return np.array(self.beta + self.kappa + self.zeta + self.eps)

    @classmethod
    def from_vector(cls, vec):
        v = [float(x) for x in vec]
        if len(v) != 16:
            raise ValueError(f"expected 16 gains, got {len(v)}")
        return cls(beta=tuple(v[0:4]), kappa=tuple(v[4:8]), zeta=tuple(v[8:12]), eps=tuple(v[12:16]))

    def as_dict(self):
        return dict(zip(self.names(), self.to_vector().tolist()))

    def discrete_warnings(self, dt):
        """Subsystems where ``beta * kappa * dt >= 1``.

        The exponential adaptive update keeps ``theta > 0`` regardless, but the
        adaptation then settles within one control period.
        """
        return [j for j in range(1, 5) if self.beta[j - 1] * self.kappa[j - 1] * dt >= 1.0]


class AdaptiveState(NamedTuple):
    """Adaptive gain estimates ``theta_1..4`` and the last virtual control."""

    theta: tuple = (1.0, 1.0, 1.0, 1.0)
    u1: float = 0.0


@dataclass(frozen=True)
class ControlOutput:
    """One controller evaluation.

    ``xd`` holds the references ``(x1d, x2d, x3d, x4d)``; ``xe`` the raw tracking
    errors ``x - xd``; ``e`` the transformed errors fed to the barrier laws.
    """

    u1: float
    u2_raw: float
    u2: float
    u3_raw: float
    u3: float
    u4_raw: float
    u4: float
    xd: tuple
    xe: tuple
    e: tuple
    phi: tuple = (0.0, 0.0, 0.0, 0.0)
    margin: tuple = (0.0, 0.0, 0.0, 0.0)
    theta: tuple = (0.0, 0.0, 0.0, 0.0)
    saturated: tuple = (False, False, False)
    clamped: tuple = (False, False, False, False)


# ---------------------------------------------------------------------------
# building blocks

def tracking_error(x_j, x_jd, j, u_prev_virtual=0.0):
    """Return ``(x_ej, e_j)``; the velocity subsystem also subtracts the virtual control."""
    x_e = x_j - x_jd
    if j == 2:
        return x_e, x_e - u_prev_virtual
    return x_e, x_e


def barrier_phi(e, rho, policy="abort", subsystem=None):
    """Barrier term ``phi = e / Q`` with ``Q = rho**2 - e**2``.

    Under ``policy="abort"`` an error on or outside the barrier raises
    :class:`BarrierViolation`; under ``"clamp"`` ``Q`` is floored at
    ``CLAMP_FRACTION * rho**2``.
    """
    q = rho * rho - e * e
    if not q > 0.0:
        if policy == "clamp" and math.isfinite(e):
            q = CLAMP_FRACTION * rho * rho
        else:
            raise BarrierViolation(subsystem, e, rho)
    return e / q, q


def barrier_margin(rho, q):
    """``log(rho**2 / Q)``; zero on target and unbounded at the barrier."""
    return math.log(rho * rho / q)


def barrier_inequality_gap(e, rho):
    """``e**2 / Q - log(rho**2 / Q)`` evaluated without cancellation.

    With ``x = (e / rho)**2`` the gap equals ``x / (1 - x) + log1p(-x)``, whose
    power series ``sum_{n>=2} (n - 1) / n * x**n`` is used for small ``x`` where
    the two terms agree to almost every digit. Positive for ``0 < |e| < rho``.
    """
    x = (e / rho) ** 2
    if not 0.0 <= x < 1.0:
        raise ValueError(f"need |e| < rho, got e={e!r}, rho={rho!r}")
    if x < 1e-3:
        return x * x * (0.5 + x * (2.0 / 3.0 + x * (0.75 + x * 0.8)))
    return x / (1.0 - x) + math.log1p(-x)


def control_law(e, phi, theta, eps, zeta):
    return -0.5 * (eps * e + zeta * theta * phi)


def adaptive_step(theta, phi, beta, kappa, zeta, dt):
    """Advance ``theta`` by ``dt`` with ``phi`` held constant over the step.

    The linear update ODE is integrated exactly, so ``theta`` relaxes towards
    ``zeta * phi**2 / (2 * kappa)`` and stays positive for any step size.

    Raises
    ------
    NumericalError
        If that target overflows.
    """
    target = zeta * phi * phi / (2.0 * kappa)
    if target == math.inf:
        raise NumericalError(f"adaptive target overflows for phi={phi!r}")
    decay = math.exp(-beta * kappa * dt)
    new = target + (theta - target) * decay
    return new if new > THETA_FLOOR else THETA_FLOOR


# ---------------------------------------------------------------------------
# DRS-BLF cascade

def drs_blf_step(state, refs, limits: ActuatorLimits, envelope: SafetyEnvelope,
                 gains: ControllerGains, adaptive: AdaptiveState, dt,
                 params: PlantParams, policy="abort"):
    """One control period of the barrier-adaptive cascade.

    Parameters
    ----------
    state : sequence of 4 floats
        Measured ``(x1, x2, x3, x4)``.
    refs : (x1d, x2d)
        Position and velocity references.
    limits, envelope, gains : configuration
    adaptive : AdaptiveState
        Estimates from the previous period.
    dt : float
        Control period [s].
    params : PlantParams
        Only the torque constant is used (torque-to-current bridging).
    policy : {"abort", "clamp"}

    Returns
    -------
    (ControlOutput, AdaptiveState)

    Raises
    ------
    BarrierViolation
        Under ``policy="abort"`` when any ``|e_j| >= rho_j``.
    """
    x1, x2, x3, x4 = state
    x1d, x2d = refs
    r1, r2, r3, r4 = envelope.rho
    beta, kappa, zeta, eps = gains.beta, gains.kappa, gains.zeta, gains.eps
    th = adaptive.theta

    # subsystem 1: position -> virtual control u1
    xe1 = e1 = x1 - x1d
    phi1, q1 = barrier_phi(e1, r1, policy, 1)
    th1 = adaptive_step(th[0], phi1, beta[0], kappa[0], zeta[0], dt)
    u1 = control_law(e1, phi1, th1, eps[0], zeta[0])

    # subsystem 2: velocity -> torque command u2
    xe2, e2 = tracking_error(x2, x2d, 2, u1)
    phi2, q2 = barrier_phi(e2, r2, policy, 2)
    th2 = adaptive_step(th[1], phi2, beta[1], kappa[1], zeta[1], dt)
    u2 = control_law(e2, phi2, th2, eps[1], zeta[1])
    sat2 = saturate(u2, limits.torque)
    x3d = reference_q_current(sat2.value, params)

    # subsystem 3: q current -> q voltage u3
    xe3 = e3 = x3 - x3d
    phi3, q3 = barrier_phi(e3, r3, policy, 3)
    th3 = adaptive_step(th[2], phi3, beta[2], kappa[2], zeta[2], dt)
    u3 = control_law(e3, phi3, th3, eps[2], zeta[2])
    sat3 = saturate(u3, limits.voltage_q)

    # subsystem 4: d current (reference zero) -> d voltage u4
    xe4 = e4 = x4
    phi4, q4 = barrier_phi(e4, r4, policy, 4)
    th4 = adaptive_step(th[3], phi4, beta[3], kappa[3], zeta[3], dt)
    u4 = control_law(e4, phi4, th4, eps[3], zeta[3])
    sat4 = saturate(u4, limits.voltage_d)

    theta = (th1, th2, th3, th4)
    out = ControlOutput(
        u1=u1, u2_raw=u2, u2=sat2.value, u3_raw=u3, u3=sat3.value, u4_raw=u4, u4=sat4.value,
        xd=(x1d, x2d, x3d, 0.0), xe=(xe1, xe2, xe3, xe4), e=(e1, e2, e3, e4),
        phi=(phi1, phi2, phi3, phi4),
        margin=(barrier_margin(r1, q1), barrier_margin(r2, q2), barrier_margin(r3, q3),
                barrier_margin(r4, q4)),
        theta=theta,
        saturated=(sat2.clipped, sat3.clipped, sat4.clipped),
        clamped=(abs(e1) >= r1, abs(e2) >= r2, abs(e3) >= r3, abs(e4) >= r4),
    )
    return out, AdaptiveState(theta, u1)


# ---------------------------------------------------------------------------
# PID baseline

@dataclass(frozen=True)
class PIDGains:
    """Cascade PID gains; zero disables a term."""

    kp_pos: float = 10.0
    ki_pos: float = 0.0
    kd_pos: float = 0.0
    kp_vel: float = 100.0
    ki_vel: float = 0.0
    kp_q: float = 20.0
    ki_q: float = 0.0
    kp_d: float = 20.0
    ki_d: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"PID gain {f.name} must be finite and >= 0, got {v!r}")

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]

    def to_vector(self):
        return np.array([getattr(self, n) for n in self.names()])

    @classmethod
    def from_vector(cls, vec):
        v = [float(x) for x in vec]
        if len(v) != len(cls.names()):
            raise ValueError(f"expected {len(cls.names())} PID gains, got {len(v)}")
        return cls(*v)

    def as_dict(self):
        return dict(zip(self.names(), self.to_vector().tolist()))


class PIDState(NamedTuple):
    """Integrator states of the position, velocity, q- and d-current loops."""

    integrals: tuple = (0.0, 0.0, 0.0, 0.0)


def pid_step(state, refs, limits: ActuatorLimits, gains: PIDGains, pid_state: PIDState,
             dt, params: PlantParams):
    """One control period of the cascade PID.

    Position PID (with velocity feed-forward) sets the velocity reference, a
    velocity PI sets the torque, and two current PI loops set the voltages.
    Saturating loops use back-calculation anti-windup with a tracking time of
    one control period: the integrator is moved by ``(u_sat - u_raw) / ki`` so
    that ``kp * err + ki * integral`` equals the saturated output.

    There is no barrier transformation, so ``e`` holds the tracking errors
    ``x - xd`` and the envelope checks apply to those.

    Returns
    -------
    (ControlOutput, PIDState)
    """
    x1, x2, x3, x4 = state
    x1d, x2d = refs
    g = gains
    i_pos, i_vel, i_q, i_d = pid_state.integrals

    err_pos = x1d - x1
    i_pos = i_pos + err_pos * dt
    v_ref = x2d + g.kp_pos * err_pos + g.ki_pos * i_pos + g.kd_pos * (x2d - x2)
    u1 = v_ref - x2d

    def pi(err, integ, kp, ki, lim):
        integ = integ + err * dt
        raw = kp * err + ki * integ
        sat = saturate(raw, lim)
        if sat.clipped:
            integ += (sat.value - raw) / ki
        return raw, sat, integ

    u2_raw, sat2, i_vel = pi(v_ref - x2, i_vel, g.kp_vel, g.ki_vel, limits.torque)
    x3d = reference_q_current(sat2.value, params)
    u3_raw, sat3, i_q = pi(x3d - x3, i_q, g.kp_q, g.ki_q, limits.voltage_q)
    u4_raw, sat4, i_d = pi(0.0 - x4, i_d, g.kp_d, g.ki_d, limits.voltage_d)

    xd = (x1d, x2d, x3d, 0.0)
    xe = (x1 - x1d, x2 - x2d, x3 - x3d, x4)
    out = ControlOutput(
        u1=u1, u2_raw=u2_raw, u2=sat2.value, u3_raw=u3_raw, u3=sat3.value,
        u4_raw=u4_raw, u4=sat4.value,
        xd=xd, xe=xe, e=xe,
        saturated=(sat2.clipped, sat3.clipped, sat4.clipped),
    )
    return out, PIDState((i_pos, i_vel, i_q, i_d))


# ---------------------------------------------------------------------------
# reference admissibility

@dataclass
class EnvelopeReport:
    """Outcome of checking references against ``|x_jd| <= lam_j``.

    ``violations`` maps a subsystem to ``(time, value)`` of its first violation;
    ``runtime_monitored`` lists subsystems that cannot be verified a priori.
    """

    passed: bool = True
    violations: dict = field(default_factory=dict)
    runtime_monitored: list = field(default_factory=list)
    peaks: dict = field(default_factory=dict)

    def summary(self):
        lines = []
        for j in sorted(self.peaks):
            status = "VIOLATED" if j in self.violations else "ok"
            extra = ""
            if j in self.violations:
                t, v = self.violations[j]
                extra = f" first at t={t:.6g} s (value {v:.6g})"
            lines.append(f"subsystem {j}: peak |ref| = {self.peaks[j]:.6g} {status}{extra}")
        for j in self.runtime_monitored:
            lines.append(f"subsystem {j}: runtime-monitored")
        return "\n".join(lines)


def envelope_check(times, x1d, envelope: SafetyEnvelope, x2d=None, u1_bound=None,
                   x3d_bound=None, x4d=0.0):
    """Check sampled references against the reference bounds ``lam_j``.

    Subsystem 2 depends on the runtime virtual control; it is verified only
    when ``x2d`` and an a-priori ``u1_bound`` are given (as
    ``|x2d| + u1_bound <= lam_2``) and is otherwise reported as
    runtime-monitored. Subsystem 3 is verified from ``x3d_bound`` (the largest
    current the saturated torque can request) when given.
    """
    report = EnvelopeReport()
    times = np.asarray(times, dtype=float)
    lam = envelope.lam

    def scan(j, values):
        values = np.abs(np.broadcast_to(np.asarray(values, dtype=float), times.shape))
        report.peaks[j] = float(values.max()) if values.size else 0.0
        bad = np.nonzero(values > lam[j - 1])[0]
        if bad.size:
            k = int(bad[0])
            report.violations[j] = (float(times[k]), float(values[k]))

    scan(1, x1d)
    if x2d is not None and u1_bound is not None:
        scan(2, np.abs(np.asarray(x2d, dtype=float)) + float(u1_bound))
    else:
        report.runtime_monitored.append(2)
    if x3d_bound is not None:
        scan(3, np.full(times.shape, float(x3d_bound)))
    else:
        report.runtime_monitored.append(3)
    scan(4, np.full(times.shape, float(x4d)))
    report.runtime_monitored.sort()
    report.passed = not report.violations
    return report
