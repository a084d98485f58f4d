"""Exception hierarchy shared by every layer of the toolkit."""


class DPError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DPError):
    """Invalid configuration document. ``location`` names the offending entry."""

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class DeviceError(DPError):
    """A device model left its validity region."""

    def __init__(self, message, device=None, time=None):
        self.device = device
        self.time = time
        prefix = []
        if device is not None:
            prefix.append(str(device))
        if time is not None:
            prefix.append(f"t={time:.6f}s")
        if prefix:
            message = f"[{', '.join(prefix)}] {message}"
        super().__init__(message)


class LowVoltage(DeviceError):
    pass


class VoltageCollapse(DeviceError):
    pass


class SingularTopology(ConfigError):
    pass


class PowerFlowDiverged(DPError):
    def __init__(self, message, iterations=None, mismatch=None):
        self.iterations = iterations
        self.mismatch = mismatch
        super().__init__(message)


class DeviceInitInfeasible(DPError):
    pass


class StepFailure(DPError):
    pass


class NotAtEquilibrium(DPError):
    pass


class EigenFailure(DPError):
    pass


class IllConditioned(DPError):
    pass


class MissingChannel(DPError):
    pass


class UnstablePlant(DPError):
    pass


class UnstableClosedLoop(DPError):
    pass


class AssumptionViolated(DPError):
    pass


class GammaInfeasible(DPError):
    def __init__(self, message, lower_bound=None):
        self.lower_bound = lower_bound
        super().__init__(message)


class AlgebraicLoop(DPError):
    pass
