"""Exception types shared across the package."""


class HydroflockError(Exception):
    """Base class for all package errors."""


class TopologyError(HydroflockError):
    """Invalid network description (dangling endpoints, duplicate ids, ...)."""


class SchemaError(HydroflockError):
    """A file (CSV, JSON) does not match its documented schema."""


class DirectiveError(HydroflockError):
    """A guidance directive failed validation."""


class SimulationError(HydroflockError):
    """Invalid runtime input to the simulator (action bounds, negative dt, ...)."""
