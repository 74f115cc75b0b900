"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised when a scenario or parameter file fails validation.

    ``errors`` holds every problem found, as ``(line_number, message)`` pairs
    (line number is ``None`` when the problem is not tied to a line).
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [(None, errors)]
        self.errors = list(errors)
        lines = []
        for lineno, msg in self.errors:
            lines.append(f"line {lineno}: {msg}" if lineno is not None else msg)
        super().__init__("\n".join(lines))


class TrajectoryError(ValueError):
    """Invalid waypoint data or a degenerate segment."""


class NumericalError(ArithmeticError):
    """A simulated quantity became non-finite.

    ``trace`` holds the partial trace when raised from the simulator.
    """

    def __init__(self, message, subsystem=None, time=None):
        super().__init__(message)
        self.subsystem = subsystem
        self.time = time
        self.trace = None


class BarrierViolation(RuntimeError):
    """A transformed tracking error left its barrier, ``|e_j| >= rho_j``.

    Attributes
    ----------
    subsystem : int
        1-based subsystem index.
    error, rho : float
        Offending error and the barrier half-width.
    time : float or None
        Simulation time of the event, filled in by the simulator.
    trace : SimulationTrace or None
        Partial trace recorded up to the violation, filled in by the simulator.
    """

    def __init__(self, subsystem, error, rho, time=None):
        self.subsystem = subsystem
        self.error = error
        self.rho = rho
        self.time = time
        self.trace = None
        super().__init__(self._describe())

    def _describe(self):
        when = f" at t={self.time:.6g} s" if self.time is not None else ""
        return (f"barrier violated in subsystem {self.subsystem}{when}: "
                f"|e|={abs(self.error):.6g} >= rho={self.rho:.6g}")

    def __str__(self):
        return self._describe()
