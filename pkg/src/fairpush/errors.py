"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """A scenario or media configuration value is invalid."""


class ProtocolError(RuntimeError):
    """A message violated the request/response contract (bad header, unknown segment)."""


class SimulationError(RuntimeError):
    """Internal inconsistency detected while advancing the simulation."""
