"""Plain-text scenario files.

A scenario file is a sequence of ``[section]`` headers followed by
``key = value`` lines; ``#`` starts a comment. The ``[trajectory]`` section is
the exception: it holds one waypoint per line, ``t pos vel acc`` (SI units).

Recognized sections: ``plant``, ``trajectory``, ``envelope``, ``limits``,
``gains.drsblf``, ``gains.pid``, ``load``, ``scenario`` and ``jaya``. Unknown
sections or keys are errors. Every problem found is reported at once through
:class:`~emla_ctrl.exceptions.ConfigError`.

Sections missing from a file are taken from the base scenario (by default the
packaged desk scenario); keys missing from a present section likewise fall
back to the base, except ``[trajectory]``, which always replaces the base as a
whole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .controller import PAPER_GAINS, ControllerGains, PIDGains, SafetyEnvelope
from .exceptions import ConfigError, TrajectoryError
from .plant import (ActuatorLimits, Constant, LoadProfile, PlantParams, PlantState, Sinusoid, Step)
from .optimizer import JayaConfig, default_bounds
from .sim import Scenario
from .trajectory import WaypointCondition, build_piecewise

RAW_SECTIONS = {"trajectory"}

PLANT_KEYS = ("pole_pairs", "flux_linkage", "inductance_d", "inductance_q", "stator_resistance",
              "rotary_to_linear", "equivalent_inertia", "equivalent_viscosity",
              "equivalent_stiffness", "force_coefficient")
ENVELOPE_KEYS = tuple(f"chi{j}" for j in range(1, 5)) + tuple(f"lambda{j}" for j in range(1, 5))
LIMIT_KEYS = ("u2_min", "u2_max", "u3_min", "u3_max", "u4_min", "u4_max")
LOAD_KEYS = ("times", "forces", "mode", "d1", "d2", "d3", "d4")
SCENARIO_KEYS = ("duration", "control_rate", "substeps", "controller", "policy", "seed",
                 "initial_state", "theta0", "measurement_noise", "convergence_band")
JAYA_KEYS = ("n_c", "generations", "seed", "retry_limit", "warm_start")

SECTIONS = {
    "plant": PLANT_KEYS,
    "trajectory": None,
    "envelope": ENVELOPE_KEYS,
    "limits": LIMIT_KEYS,
    "gains.drsblf": tuple(ControllerGains.names()),
    "gains.pid": tuple(PIDGains.names()),
    "load": LOAD_KEYS,
    "scenario": SCENARIO_KEYS,
    "jaya": JAYA_KEYS,  # plus bound.<gain> keys
}

DEFAULT_SCENARIO = "desk_scenario.ini"


@dataclass
class Section:
    name: str
    lineno: int
    entries: dict = field(default_factory=dict)  # key -> (lineno, value)
    lines: list = field(default_factory=list)    # raw sections: (lineno, text)


@dataclass
class ConfigFile:
    sections: dict
    source: str = "<string>"

    def get(self, name):
        return self.sections.get(name)


def parse_text(text, source="<string>", implicit_section=None) -> ConfigFile:
    """Split text into sections; validates section and key names.

    Lines before the first header belong to ``implicit_section`` if given
    (used to read bare waypoint files as ``[trajectory]``).
    """
    errors = []
    sections = {}
    current = None
    if implicit_section is not None:
        current = sections.setdefault(implicit_section, Section(implicit_section, 1))
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                errors.append((lineno, f"malformed section header {stripped!r}"))
                current = None
                continue
            name = stripped[1:-1].strip()
            if name not in SECTIONS:
                errors.append((lineno, f"unknown section [{name}]"))
                current = None
                continue
            implicit_unused = (name == implicit_section and not sections[name].lines
                               if name in sections else False)
            if name in sections and not implicit_unused:
                errors.append((lineno, f"duplicate section [{name}]"))
            current = sections.setdefault(name, Section(name, lineno))
            continue
        if current is None:
            errors.append((lineno, "entry outside of a known section"))
            continue
        if current.name in RAW_SECTIONS:
            current.lines.append((lineno, stripped))
            continue
        if "=" not in stripped:
            errors.append((lineno, f"expected 'key = value' in [{current.name}], got {stripped!r}"))
            continue
        key, value = (s.strip() for s in stripped.split("=", 1))
        allowed = SECTIONS[current.name]
        if key not in allowed and not (current.name == "jaya" and key.startswith("bound.")):
            errors.append((lineno, f"unknown key {key!r} in [{current.name}]"))
            continue
        if key in current.entries:
            errors.append((lineno, f"duplicate key {key!r} in [{current.name}]"))
            continue
        current.entries[key] = (lineno, value)
    if errors:
        raise ConfigError([(ln, f"{source}: {msg}") for ln, msg in errors])
    return ConfigFile(sections, source)


def read_file(path, implicit_section=None) -> ConfigFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_text(text, str(path), implicit_section)


def load_waypoints(path):
    """Waypoints from a scenario file's ``[trajectory]`` or a bare ``t pos vel acc`` file."""
    return parse_waypoints(read_file(path, implicit_section="trajectory"))


def default_text(name=DEFAULT_SCENARIO):
    return resources.files("emla_ctrl.data").joinpath(name).read_text()


def merge(base: ConfigFile, over: ConfigFile) -> ConfigFile:
    merged = {}
    for name in SECTIONS:
        b, o = base.get(name), over.get(name)
        if o is None:
            if b is not None:
                merged[name] = b
            continue
        if b is None or name in RAW_SECTIONS:
            merged[name] = o
            continue
        entries = dict(b.entries)
        entries.update(o.entries)
        merged[name] = Section(name, o.lineno, entries)
    return ConfigFile(merged, over.source)


# ---------------------------------------------------------------------------
# typed value extraction with error collection

class _Reader:
    def __init__(self, cfg: ConfigFile):
        self.cfg = cfg
        self.errors = []

    def err(self, lineno, msg):
        self.errors.append((lineno, f"{self.cfg.source}: {msg}"))

    def _raw(self, section, key, required):
        sec = self.cfg.get(section)
        if sec is None or key not in sec.entries:
            if required:
                self.err(sec.lineno if sec else None, f"missing [{section}] {key}")
            return None, None
        return sec.entries[key]

    def number(self, section, key, required=True, default=None, kind=float):
        lineno, value = self._raw(section, key, required)
        if value is None:
            return default
        try:
            v = kind(value) if kind is float else int(value)
        except ValueError:
            self.err(lineno, f"[{section}] {key}: expected a number, got {value!r}")
            return default
        if kind is float and not math.isfinite(v):
            self.err(lineno, f"[{section}] {key}: value must be finite")
            return default
        return v

    def numbers(self, section, key, count=None, required=True, default=None):
        lineno, value = self._raw(section, key, required)
        if value is None:
            return default
        try:
            vals = tuple(float(v) for v in value.replace(",", " ").split())
        except ValueError:
            self.err(lineno, f"[{section}] {key}: expected numbers, got {value!r}")
            return default
        if count is not None and len(vals) != count:
            self.err(lineno, f"[{section}] {key}: expected {count} values, got {len(vals)}")
            return default
        return vals

    def text(self, section, key, required=True, default=None, choices=None):
        lineno, value = self._raw(section, key, required)
        if value is None:
            return default
        if choices and value not in choices:
            self.err(lineno, f"[{section}] {key}: expected one of {choices}, got {value!r}")
            return default
        return value

    def build(self, section, factory, *args, **kwargs):
        """Call a constructor, turning ``ValueError`` into a collected error."""
        sec = self.cfg.get(section)
        try:
            return factory(*args, **kwargs)
        except (ValueError, TypeError) as exc:
            self.err(sec.lineno if sec else None, f"[{section}]: {exc}")
            return None


def _parse_disturbance(reader, key):
    lineno, value = reader._raw("load", key, False)
    if value is None:
        return None
    parts = value.split()
    kind, nums = parts[0], parts[1:]
    try:
        args = [float(v) for v in nums]
        if not all(math.isfinite(a) for a in args):
            raise ValueError
        if kind == "none" and not args:
            return None
        if kind == "const" and len(args) == 1:
            return Constant(*args)
        if kind == "step" and len(args) in (2, 3):
            return Step(*args)
        if kind == "sine" and 2 <= len(args) <= 4:
            return Sinusoid(*args)
    except ValueError:
        pass
    reader.err(lineno, f"[load] {key}: expected 'none', 'const A', 'step T A [before]' or "
                       f"'sine A F [phase offset]', got {value!r}")
    return None


def parse_waypoints(cfg: ConfigFile):
    """Waypoints of the ``[trajectory]`` section; errors carry line numbers."""
    sec = cfg.get("trajectory")
    if sec is None:
        raise ConfigError(f"{cfg.source}: missing [trajectory] section")
    errors, wps, lines = [], [], []
    for lineno, text in sec.lines:
        parts = text.replace(",", " ").split()
        try:
            vals = [float(v) for v in parts]
        except ValueError:
            errors.append((lineno, f"{cfg.source}: waypoint must be numeric 't pos vel acc', got {text!r}"))
            continue
        if not 2 <= len(vals) <= 4 or not all(math.isfinite(v) for v in vals):
            errors.append((lineno, f"{cfg.source}: waypoint needs 't pos [vel [acc]]' finite values, got {text!r}"))
            continue
        if wps and not vals[0] > wps[-1].t:
            errors.append((lineno, f"{cfg.source}: waypoint time {vals[0]} is not after {wps[-1].t} "
                                   f"(line {lines[-1]})"))
            continue
        wps.append(WaypointCondition(*vals))
        lines.append(lineno)
    if len(wps) < 2 and not errors:
        errors.append((sec.lineno, f"{cfg.source}: [trajectory] needs at least 2 waypoints"))
    if errors:
        raise ConfigError(errors)
    return wps


def plant_params_from(reader: _Reader):
    vals = {}
    for key in PLANT_KEYS:
        kind = int if key == "pole_pairs" else float
        vals[key] = reader.number("plant", key, kind=kind)
    if any(v is None for v in vals.values()):
        return None
    return reader.build("plant", PlantParams, **vals)


def load_plant_params(path=None) -> PlantParams:
    """Plant parameters from a file (only ``[plant]`` is read) or the packaged defaults."""
    cfg = read_file(path) if path is not None else parse_text(default_text(), DEFAULT_SCENARIO)
    reader = _Reader(cfg)
    params = plant_params_from(reader)
    if reader.errors:
        raise ConfigError(reader.errors)
    return params


def scenario_from_config(cfg: ConfigFile) -> Scenario:
    reader = _Reader(cfg)
    params = plant_params_from(reader)

    traj = None
    try:
        traj = build_piecewise(parse_waypoints(cfg))
    except ConfigError as exc:
        reader.errors.extend(exc.errors)
    except TrajectoryError as exc:
        reader.err(None, f"[trajectory]: {exc}")

    chi = tuple(reader.number("envelope", f"chi{j}") for j in range(1, 5))
    lam = tuple(reader.number("envelope", f"lambda{j}") for j in range(1, 5))
    envelope = None
    if None not in chi + lam:
        envelope = reader.build("envelope", SafetyEnvelope, chi, lam)

    lv = [reader.number("limits", k) for k in LIMIT_KEYS]
    limits = None
    if None not in lv:
        limits = reader.build("limits", ActuatorLimits, (lv[0], lv[1]), (lv[2], lv[3]), (lv[4], lv[5]))

    gains = ControllerGains()
    if cfg.get("gains.drsblf") is not None:
        vec = [reader.number("gains.drsblf", k, required=False, default=v)
               for k, v in ControllerGains().as_dict().items()]
        if None not in vec:
            gains = reader.build("gains.drsblf", ControllerGains.from_vector, vec) or gains
    pid = PIDGains()
    if cfg.get("gains.pid") is not None:
        vec = [reader.number("gains.pid", k, required=False, default=v)
               for k, v in PIDGains().as_dict().items()]
        if None not in vec:
            pid = reader.build("gains.pid", PIDGains.from_vector, vec) or pid

    load = LoadProfile()
    if cfg.get("load") is not None:
        times = reader.numbers("load", "times", required=False, default=())
        forces = reader.numbers("load", "forces", required=False, default=())
        mode = reader.text("load", "mode", required=False, default="step", choices=("step", "linear"))
        dist = tuple(_parse_disturbance(reader, f"d{j}") for j in range(1, 5))
        load = reader.build("load", LoadProfile, times, forces, mode, dist) or LoadProfile()

    s = "scenario"
    kwargs = dict(
        duration=reader.number(s, "duration"),
        control_rate=reader.number(s, "control_rate", required=False, default=1000.0),
        substeps=reader.number(s, "substeps", required=False, default=4, kind=int),
        controller=reader.text(s, "controller", required=False, default="drsblf",
                               choices=("drsblf", "pid")),
        policy=reader.text(s, "policy", required=False, default="abort", choices=("abort", "clamp")),
        seed=reader.number(s, "seed", required=False, default=0, kind=int),
        initial_state=PlantState(*reader.numbers(s, "initial_state", 4, False, (0.0,) * 4)),
        theta0=reader.numbers(s, "theta0", 4, False, (1.0,) * 4),
        measurement_noise=reader.numbers(s, "measurement_noise", 4, False, (0.0,) * 4),
        convergence_band=reader.number(s, "convergence_band", required=False, default=0.02),
    )
    if reader.errors or None in (params, traj, envelope, limits) or kwargs["duration"] is None:
        raise ConfigError(reader.errors or [(None, f"{cfg.source}: invalid scenario")])
    scenario = reader.build(s, Scenario, params=params, trajectory=traj, envelope=envelope,
                            limits=limits, load=load, gains=gains, pid_gains=pid, **kwargs)
    if reader.errors:
        raise ConfigError(reader.errors)
    return scenario


def jaya_from_config(cfg: ConfigFile, kind="drsblf", scenario: Scenario = None):
    """Jaya settings of ``[jaya]`` for tuning controller ``kind``.

    Search bounds default to :func:`~emla_ctrl.optimizer.default_bounds`;
    ``bound.<gain> = lo hi`` overrides one gain. ``warm_start`` is ``none``,
    ``scenario`` (the gains of the scenario itself, needs ``scenario``) or
    ``paper`` (published DRS-BLF gains, drsblf only).

    Returns
    -------
    (JayaConfig, numpy.ndarray or None)
    """
    reader = _Reader(cfg)
    names = ControllerGains.names() if kind == "drsblf" else PIDGains.names()
    lower, upper = (list(b) for b in default_bounds(kind))
    sec = cfg.get("jaya")
    if sec is not None:
        for key, (lineno, _) in sec.entries.items():
            if not key.startswith("bound."):
                continue
            gain = key[len("bound."):]
            other = ControllerGains.names() if kind == "pid" else PIDGains.names()
            if gain in other and gain not in names:
                continue  # bound for the other controller
            if gain not in names:
                reader.err(lineno, f"[jaya] {key}: unknown gain {gain!r}")
                continue
            pair = reader.numbers("jaya", key, 2)
            if pair is not None:
                i = names.index(gain)
                lower[i], upper[i] = pair
    n_c = reader.number("jaya", "n_c", required=False, default=15, kind=int)
    generations = reader.number("jaya", "generations", required=False, default=50, kind=int)
    seed = reader.number("jaya", "seed", required=False, default=0, kind=int)
    retry = reader.number("jaya", "retry_limit", required=False, default=20, kind=int)
    warm = reader.text("jaya", "warm_start", required=False, default="none",
                       choices=("none", "scenario", "paper"))
    jaya = reader.build("jaya", JayaConfig, tuple(lower), tuple(upper), n_c, generations, seed, retry)
    vec = None
    if warm == "paper":
        if kind != "drsblf":
            reader.err(sec.entries["warm_start"][0] if sec else None,
                       "[jaya] warm_start = paper only applies to the drsblf controller")
        vec = ControllerGains(**PAPER_GAINS).to_vector()
    elif warm == "scenario" and scenario is not None:
        vec = (scenario.gains if kind == "drsblf" else scenario.pid_gains).to_vector()
    if reader.errors:
        raise ConfigError(reader.errors)
    return jaya, vec


def base_config() -> ConfigFile:
    return parse_text(default_text(), DEFAULT_SCENARIO)


def load_config(path=None, base=True) -> ConfigFile:
    """Parsed scenario file, overlaid on the packaged defaults when ``base``."""
    if path is None:
        return base_config()
    cfg = read_file(path)
    return merge(base_config(), cfg) if base else cfg


def load_scenario(path=None, base=True) -> Scenario:
    return scenario_from_config(load_config(path, base))


def format_section(name, values: dict):
    lines = [f"[{name}]"]
    lines += [f"{k} = {v!r}" for k, v in values.items()]
    return "\n".join(lines) + "\n"
