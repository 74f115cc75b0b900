"""Jaya gain tuning.

Each generation moves every candidate towards the current best and away from
the current worst member,

    c_new = c + r1 * (c_best - c) - r2 * (c_worst - c),   r1, r2 ~ U[0, 1]^N,

and keeps the move only if it lowers the objective. Best and worst are
refreshed once per generation, so the evaluations inside a generation are
independent and can run in parallel without changing the result.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .controller import ControllerGains, PIDGains
from .exceptions import BarrierViolation, NumericalError
from .sim import Scenario, SimulationTrace, run

PENALTY = 1e6


@dataclass(frozen=True)
class JayaConfig:
    """Population size, budget and the positive per-dimension search box."""

    lower: tuple
    upper: tuple
    n_c: int = 15
    generations: int = 50
    seed: int = 0
    retry_limit: int = 20

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper bounds must have the same, non-zero length")
        for k, (a, b) in enumerate(zip(lo, hi)):
            if not (0 < a <= b and math.isfinite(b)):
                raise ValueError(f"bound {k}: need 0 < lower <= upper < inf, got ({a}, {b})")
        if self.n_c < 3:
            raise ValueError(f"population size must be >= 3, got {self.n_c}")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return len(self.lower)


@dataclass
class JayaResult:
    best: np.ndarray
    best_fx: float
    history: list             # (generation, best_fx, mean_fx, worst_fx)
    population: np.ndarray
    fitness: np.ndarray
    evaluations: int = 0

    def history_csv(self):
        lines = ["generation,best_fx,mean_fx,worst_fx"]
        lines += [f"{g},{b!r},{m!r},{w!r}" for g, b, m, w in self.history]
        return "\n".join(lines) + "\n"


def candidate_rng(seed, generation, index):
    """Independent stream per (generation, candidate); generation 0 is initialization."""
    return np.random.default_rng([int(seed), int(generation), int(index)])


def jaya_update(c, c_best, c_worst, rng, retry_limit=20, lower=None, upper=None):
    """Move one candidate; redraw the random vectors while any component is <= 0.

    After ``retry_limit`` redraws, non-positive components are set to ``lower``
    (or the smallest positive float). The result is finally clipped into
    ``[lower, upper]`` when bounds are given.
    """
    c = np.asarray(c, dtype=float)
    c_best = np.asarray(c_best, dtype=float)
    c_worst = np.asarray(c_worst, dtype=float)
    n = c.shape[0]
    for _ in range(retry_limit + 1):
        r1 = rng.random(n)
        r2 = rng.random(n)
        new = c + r1 * (c_best - c) - r2 * (c_worst - c)
        if np.all(new > 0):
            break
    else:
        floor = np.asarray(lower, dtype=float) if lower is not None else np.finfo(float).tiny
        new = np.where(new > 0, new, floor)
    if lower is not None or upper is not None:
        new = np.clip(new, lower, upper)
    return new


def initial_population(config: JayaConfig, warm_start=None):
    """Log-uniform samples in the bounds; candidate 0 pinned to ``warm_start`` if given."""
    lo = np.log(np.array(config.lower))
    hi = np.log(np.array(config.upper))
    pop = np.empty((config.n_c, config.dim))
    for i in range(config.n_c):
        pop[i] = np.exp(lo + (hi - lo) * candidate_rng(config.seed, 0, i).random(config.dim))
    if warm_start is not None:
        pop[0] = np.clip(np.asarray(warm_start, dtype=float), config.lower, config.upper)
    return pop


def _sanitize(f):
    f = float(f)
    return f if math.isfinite(f) else 2.0 * PENALTY


def _evaluate(objective, candidates, jobs, pool):
    if pool is not None:
        values = list(pool.map(objective, list(candidates)))
    else:
        values = [objective(c) for c in candidates]
    return np.array([_sanitize(v) for v in values])


def optimize(objective: Callable, config: JayaConfig, warm_start=None, jobs=1,
             callback=None) -> JayaResult:
    """Minimize ``objective`` over the configured box.

    Parameters
    ----------
    objective : callable
        Maps a gain vector to a float; must be picklable when ``jobs > 1``.
    warm_start : array-like, optional
        Pinned as initial candidate 0 (clipped into the bounds).
    jobs : int
        Worker processes for objective evaluation.
    callback : callable, optional
        Called as ``callback(generation, best_fx, mean_fx, worst_fx)``.

    Returns
    -------
    JayaResult
        ``history[g]`` summarizes the population after generation ``g``
        (``g = 0`` is the initial population).
    """
    pool = ProcessPoolExecutor(jobs) if jobs and jobs > 1 else None
    try:
        pop = initial_population(config, warm_start)
        fit = _evaluate(objective, pop, jobs, pool)
        evals = len(fit)
        history = []

        def record(g):
            row = (g, float(fit.min()), float(fit.mean()), float(fit.max()))
            history.append(row)
            if callback is not None:
                callback(*row)

        record(0)
        for g in range(1, config.generations + 1):
            best = pop[int(np.argmin(fit))].copy()
            worst = pop[int(np.argmax(fit))].copy()
            new = np.array([jaya_update(pop[i], best, worst, candidate_rng(config.seed, g, i),
                                        config.retry_limit, config.lower, config.upper)
                            for i in range(config.n_c)])
            new_fit = _evaluate(objective, new, jobs, pool)
            evals += len(new_fit)
            better = new_fit < fit
            pop[better] = new[better]
            fit[better] = new_fit[better]
            record(g)
        b = int(np.argmin(fit))
        return JayaResult(pop[b].copy(), float(fit[b]), history, pop, fit, evals)
    finally:
        if pool is not None:
            pool.shutdown()


# ---------------------------------------------------------------------------
# closed-loop objective

def tracking_objective(trace: SimulationTrace):
    """Root of the summed squared position and velocity tracking errors over all samples."""
    xe = trace.xe
    return math.sqrt(float(np.sum(xe[:, 0] ** 2)) + float(np.sum(xe[:, 1] ** 2)))


def abort_penalty(time, duration):
    remaining = 1.0 if time is None else min(max(1.0 - time / duration, 0.0), 1.0)
    return PENALTY * (1.0 + remaining)


def gains_from_vector(kind, vec):
    return ControllerGains.from_vector(vec) if kind == "drsblf" else PIDGains.from_vector(vec)


@dataclass(frozen=True)
class ScenarioObjective:
    """Closed-loop tracking objective of a gain vector on a fixed scenario."""

    scenario: Scenario
    kind: str = "drsblf"

    def scenario_for(self, vec):
        gains = gains_from_vector(self.kind, vec)
        if self.kind == "drsblf":
            return self.scenario.with_(controller="drsblf", gains=gains)
        return self.scenario.with_(controller="pid", pid_gains=gains)

    def __call__(self, vec):
        try:
            sc = self.scenario_for(vec)
        except ValueError:
            return 2.0 * PENALTY
        try:
            return tracking_objective(run(sc))
        except (BarrierViolation, NumericalError) as exc:
            return abort_penalty(exc.time, sc.duration)


def default_bounds(kind):
    """Search box used when a config gives no bounds for a gain."""
    if kind == "drsblf":
        lo = dict(beta=0.1, kappa=0.1, zeta=1e-4, eps=1e-3)
        hi = dict(beta=1e3, kappa=1e3, zeta=1e3, eps=1e4)
        names = ControllerGains.names()
        return ([lo[n[:-1]] for n in names], [hi[n[:-1]] for n in names])
    names = PIDGains.names()
    return ([1e-6] * len(names), [1e4] * len(names))


def tune(scenario: Scenario, kind, config: JayaConfig, warm_start=None, jobs=1, callback=None):
    """Jaya-tune the gains of one controller on ``scenario``."""
    return optimize(ScenarioObjective(scenario, kind), config, warm_start, jobs, callback)
