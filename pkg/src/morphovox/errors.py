"""Exception types shared across the package."""


class MorphovoxError(Exception):
    """Base class for package errors."""


class DomainError(MorphovoxError, ValueError):
    """An argument lies outside the domain of a formula or constructor."""


class StructureError(MorphovoxError, ValueError):
    """A voxel structure, shape or controller is inconsistent."""


class MalformedGenomeError(MorphovoxError, ValueError):
    """A CPPN genome violates its graph invariants (e.g. contains a cycle)."""


class SimulationDiverged(MorphovoxError, RuntimeError):
    """The integrator produced a non-finite state."""

    def __init__(self, time: float):
        super().__init__(f"simulation diverged at t={time:.6g} s")
        self.time = time


class ConfigError(MorphovoxError, ValueError):
    """Invalid run configuration; the message names the offending key path."""

    def __init__(self, key: str, problem: str):
        super().__init__(f"{key}: {problem}")
        self.key = key
