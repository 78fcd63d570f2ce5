class MhdLabError(Exception):
    """Base class for every error raised by mhdlab."""


class GridMismatchError(MhdLabError):
    def __init__(self, axis, expected, got):
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"axis {axis}: expected {expected} points, got {got}")


class MultiplierError(MhdLabError):
    def __init__(self, xi, value):
        self.xi = xi
        self.value = value
        super().__init__(f"symbol is not finite at xi=({xi[0]:.6g}, {xi[1]:.6g}): {value}")


class NonZeroMeanError(MhdLabError):
    def __init__(self, mean):
        self.mean = mean
        super().__init__(f"homogeneous norm undefined: field mean is {mean:.3e}")


class ParameterRangeError(MhdLabError):
    def __init__(self, condition, detail=""):
        self.condition = condition
        msg = f"parameter condition violated: {condition}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class DegenerateModeError(MhdLabError):
    def __init__(self, xi=(0.0, 0.0)):
        self.xi = xi
        super().__init__("degenerate mode: xi = (0, 0)")


class DecayFitError(MhdLabError):
    pass


class InitializationError(MhdLabError):
    pass


class StabilityError(MhdLabError):
    def __init__(self, dt, limit):
        self.dt = dt
        self.limit = limit
        super().__init__(f"dt={dt:.3e} exceeds the stability limit {limit:.3e}")


class BlowUpError(MhdLabError):
    def __init__(self, t, ledger):
        self.t = t
        self.ledger = dict(ledger)
        details = ", ".join(f"{k}={v:.3e}" for k, v in self.ledger.items())
        super().__init__(f"non-finite state at t={t:.6g} ({details})")


class StructureError(MhdLabError):
    def __init__(self, hypothesis, residual):
        self.hypothesis = hypothesis
        self.residual = residual
        super().__init__(f"structural hypothesis '{hypothesis}' fails: residual {residual:.3e}")


class ConfigError(MhdLabError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class LedgerError(MhdLabError):
    pass


class SnapshotError(MhdLabError):
    pass
