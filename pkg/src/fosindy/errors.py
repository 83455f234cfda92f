"""Exception hierarchy shared by every stage of the pipeline."""


class FoLocateError(Exception):
    """Base class for all package errors."""


class ConfigError(FoLocateError, ValueError):
    """Invalid model, scenario or solver configuration."""


class SimulationDiverged(FoLocateError, ArithmeticError):
    def __init__(self, step, t):
        self.step = step
        self.t = t
        super().__init__(f"simulation diverged: non-finite state at step {step} (t={t:.6g} s)")


class InsufficientDataError(FoLocateError, ValueError):
    """Too few samples for the requested operation."""


class DegenerateLibraryError(FoLocateError, ValueError):
    """Feature library would contain no informative columns."""


class EmptyModelError(FoLocateError, ValueError):
    """Sparse regression eliminated every column for some target."""


class EnsembleFailedError(FoLocateError, RuntimeError):
    """More than half of the bootstrap fits failed."""


class ConsistencyError(FoLocateError, RuntimeError):
    """Internal data structures disagree (e.g. unpaired sin/cos terms)."""


class IngestionError(FoLocateError, ValueError):
    """Measurement file does not match the trajectory schema."""


class StageError(FoLocateError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original."""

    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")
