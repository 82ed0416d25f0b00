"""Exception types shared by the learner, the solvers and the experiment harness."""


class MospError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(MospError, ValueError):
    """Invalid parameter or mismatched input shapes."""


class OracleFailureError(MospError):
    """A loss or constraint oracle returned a non-finite value."""


class SolverFailureError(MospError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class InfeasibleProblemError(MospError):
    def __init__(self, message, slack=float("nan")):
        super().__init__(f"{message} (min achievable max-violation={slack:.3e})")
        self.slack = slack


class ProtocolError(MospError):
    def __init__(self, sender, slot, message="missing expected message"):
        super().__init__(f"{message}: sender={sender}, slot={slot}")
        self.sender = sender
        self.slot = slot


class ResourceLimitError(MospError):
    """Requested computation exceeds a configured size guard."""


class ConfigError(MospError):
    def __init__(self, key, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{key}: {message}")
        self.key = key
        self.message = message
        self.line = line
