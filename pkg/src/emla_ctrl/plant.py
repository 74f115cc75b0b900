"""PMSM-driven electromechanical linear actuator model.

States follow the subsystem ordering used throughout the package::

    x1  load-side position        [m]
    x2  load-side velocity        [m/s]
    x3  q-axis current            [A]
    x4  d-axis current            [A]

Channels 2, 3 and 4 (torque command, q-axis voltage, d-axis voltage) pass
through :func:`saturate`, which also returns the affine decomposition
``Sat(u) = s1 * u + s2`` used by the controller analysis.
"""

from __future__ import annotations

import bisect
import functools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

from .exceptions import NumericalError

STATE_NAMES = ("position", "velocity", "current_q", "current_d")


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of the actuator (SI units).

    ``torque_constant`` is derived as ``1.5 * pole_pairs * flux_linkage`` and
    cached at construction.
    """

    pole_pairs: int
    flux_linkage: float          # Wb
    inductance_d: float          # H
    inductance_q: float          # H
    stator_resistance: float     # Ohm
    rotary_to_linear: float      # rad/m
    equivalent_inertia: float    # torque per unit linear acceleration
    equivalent_viscosity: float  # torque per unit linear velocity
    equivalent_stiffness: float  # torque per unit linear displacement
    force_coefficient: float     # torque per unit load force
    torque_constant: float = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.pole_pairs) != self.pole_pairs or self.pole_pairs < 1:
            raise ValueError(f"pole_pairs must be a positive integer, got {self.pole_pairs!r}")
        positive = ("flux_linkage", "inductance_d", "inductance_q", "stator_resistance",
                    "rotary_to_linear", "equivalent_inertia", "equivalent_viscosity",
                    "force_coefficient")
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")
        if not (math.isfinite(self.equivalent_stiffness) and self.equivalent_stiffness >= 0):
            raise ValueError(f"equivalent_stiffness must be finite and >= 0, "
                             f"got {self.equivalent_stiffness!r}")
        object.__setattr__(self, "pole_pairs", int(self.pole_pairs))
        object.__setattr__(self, "torque_constant", 1.5 * self.pole_pairs * self.flux_linkage)


class PlantState(NamedTuple):
    """Four-state vector of the actuator."""

    position: float = 0.0
    velocity: float = 0.0
    current_q: float = 0.0
    current_d: float = 0.0


# ---------------------------------------------------------------------------
# load and disturbance profiles

@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t):
        return self.value


@dataclass(frozen=True)
class Step:
    time: float
    amplitude: float
    before: float = 0.0

    def __call__(self, t):
        return self.amplitude if t >= self.time else self.before


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    frequency: float  # Hz
    phase: float = 0.0
    offset: float = 0.0

    def __call__(self, t):
        return self.offset + self.amplitude * math.sin(2.0 * math.pi * self.frequency * t + self.phase)


@dataclass(frozen=True)
class LoadProfile:
    """Load force over time plus optional additive disturbances d1..d4.

    The force is tabulated at ``times``. With ``mode="step"`` it is piecewise
    constant (value of the latest breakpoint at or before ``t``, zero before the
    first one); with ``mode="linear"`` it is linearly interpolated and held
    beyond both ends.
    """

    times: tuple = ()
    forces: tuple = ()
    mode: str = "step"
    disturbances: tuple = (None, None, None, None)

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "forces", tuple(float(f) for f in self.forces))
        if len(self.times) != len(self.forces):
            raise ValueError("load profile needs one force per breakpoint time")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("load breakpoint times must be strictly increasing")
        if not all(math.isfinite(v) for v in self.times + self.forces):
            raise ValueError("load profile values must be finite")
        if self.mode not in ("step", "linear"):
            raise ValueError(f"unknown load interpolation mode {self.mode!r}")
        dist = tuple(self.disturbances) + (None,) * (4 - len(self.disturbances))
        if len(dist) != 4:
            raise ValueError("at most four disturbance channels (d1..d4)")
        object.__setattr__(self, "disturbances", dist)

    @classmethod
    def step(cls, time, force, **kwargs):
        return cls(times=(time,), forces=(force,), **kwargs)

    def force(self, t):
        times = self.times
        if not times:
            return 0.0
        if self.mode == "step":
            i = bisect.bisect_right(times, t) - 1
            return self.forces[i] if i >= 0 else 0.0
        if t <= times[0]:
            return self.forces[0]
        if t >= times[-1]:
            return self.forces[-1]
        i = bisect.bisect_right(times, t) - 1
        w = (t - times[i]) / (times[i + 1] - times[i])
        return (1.0 - w) * self.forces[i] + w * self.forces[i + 1]

    def disturbance(self, t):
        return tuple(0.0 if d is None else float(d(t)) for d in self.disturbances)

    @property
    def has_disturbance(self):
        return any(d is not None for d in self.disturbances)


# ---------------------------------------------------------------------------
# electromagnetics

def torque_from_currents(i_q, i_d, params: PlantParams):
    """Electromagnetic torque of the salient PMSM [N m]."""
    p = params
    return 1.5 * p.pole_pairs * (i_q * (p.flux_linkage + (p.inductance_d - p.inductance_q) * i_d))


def reference_q_current(torque_ref, params: PlantParams):
    """q-axis current that produces ``torque_ref`` with zero d-axis current."""
    if not math.isfinite(torque_ref):
        raise ValueError(f"torque reference must be finite, got {torque_ref!r}")
    return 2.0 * torque_ref / (3.0 * params.pole_pairs * params.flux_linkage)


@functools.lru_cache(maxsize=32)
def plant_rhs(params: PlantParams):
    """Unchecked right-hand side ``rhs(x1, x2, x3, x4, u_q, u_d, load_force)``.

    Constants are bound once per parameter set; the simulator calls this in its
    inner loop and checks finiteness after every integration step.
    """
    p = params
    pc = p.pole_pairs * p.rotary_to_linear
    kt, dl = 1.5 * p.pole_pairs * p.flux_linkage, 1.5 * p.pole_pairs * (p.inductance_d - p.inductance_q)
    inv_i, b, k, fc = 1.0 / p.equivalent_inertia, p.equivalent_viscosity, p.equivalent_stiffness, p.force_coefficient
    r, lq, ld, flux = p.stator_resistance, p.inductance_q, p.inductance_d, p.flux_linkage

    def rhs(x1, x2, x3, x4, u_q, u_d, load_force):
        w = pc * x2  # electrical speed
        return (x2,
                ((kt + dl * x4) * x3 - b * x2 - k * x1 - fc * load_force) * inv_i,
                (u_q - r * x3 - w * ld * x4 - w * flux) / lq,
                (u_d - r * x4 + 2.0 * w * lq * x3) / ld)

    return rhs


def plant_derivatives(state, u_q, u_d, load_force, params: PlantParams,
                      disturbance: Sequence[float] = (0.0, 0.0, 0.0, 0.0)):
    """Time derivative of the plant state.

    The mechanical subsystem is driven by the torque the motor actually
    produces from its currents, not by the commanded torque.

    Parameters
    ----------
    state : sequence of 4 floats
        ``(x1, x2, x3, x4)``.
    u_q, u_d : float
        Applied (already saturated) dq voltages [V].
    load_force : float
        Load force at the current time [N].
    params : PlantParams
    disturbance : sequence of 4 floats
        Additive terms on each state derivative.

    Returns
    -------
    tuple of 4 floats

    Raises
    ------
    NumericalError
        If any derivative is non-finite.
    """
    x1, x2, x3, x4 = state
    base = plant_rhs(params)(x1, x2, x3, x4, u_q, u_d, load_force)
    out = tuple(v + d for v, d in zip(base, disturbance))
    for j, v in enumerate(out):
        if not math.isfinite(v):
            raise NumericalError(f"non-finite derivative in subsystem {j + 1} "
                                 f"({STATE_NAMES[j]}): {v!r}", subsystem=j + 1)
    return out


# ---------------------------------------------------------------------------
# saturation

class SaturationLimits(NamedTuple):
    """Admissible interval ``[lower, upper]`` of one control channel."""

    lower: float
    upper: float

    def validate(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("saturation limits must be finite")
        if not (self.lower < 0.0 < self.upper):
            raise ValueError(f"saturation limits must satisfy lower < 0 < upper, got {tuple(self)}")
        return self


@dataclass(frozen=True)
class ActuatorLimits:
    """Saturation limits of the torque command and both voltage channels."""

    torque: SaturationLimits
    voltage_q: SaturationLimits
    voltage_d: SaturationLimits

    def __post_init__(self):
        for name in ("torque", "voltage_q", "voltage_d"):
            object.__setattr__(self, name, SaturationLimits(*getattr(self, name)).validate())


class SatOutcome(NamedTuple):
    value: float
    s1: float
    s2: float
    clipped: bool


def saturate(u, limits) -> SatOutcome:
    """Clip ``u`` into ``limits`` and return its affine decomposition.

    Out of band, ``s1 = 1 / (|u| + 1)`` and ``s2 = bound - u / (|u| + 1)`` so
    that ``value == s1 * u + s2``. Both bounds belong to the in-band branch.
    """
    lower, upper = limits
    if lower <= u <= upper:
        return SatOutcome(u, 1.0, 0.0, False)
    s1 = 1.0 / (abs(u) + 1.0)
    bound = upper if u > upper else lower
    return SatOutcome(bound, s1, bound - u * s1, True)
