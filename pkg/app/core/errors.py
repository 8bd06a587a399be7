class SimulationError(ValueError):
    """Base class for every domain error raised by the simulator services."""


class GridMismatchError(SimulationError):
    pass


class ChannelIndexError(SimulationError):
    pass


class UnsupportedPulseError(SimulationError):
    pass


class TargetAtOriginError(SimulationError):
    pass


class RankDeficientError(SimulationError):
    pass


class NoPeakError(SimulationError):
    pass


class UnobservableGeometryError(SimulationError):
    pass


class ConvergenceError(SimulationError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class InfeasibleDesignError(SimulationError):
    pass


class ConfigError(SimulationError):
    pass


class ResultsWriteError(SimulationError):
    pass
