"""Exception types shared across the package."""


class GaugeSimError(Exception):
    """Base class for all gaugesim errors."""


class ContractError(GaugeSimError, ValueError):
    """An input violates a documented precondition (non-Hermitian, wrong shape, ...)."""


class DivergenceError(GaugeSimError, RuntimeError):
    """Integration produced non-finite values."""


class ConfigError(GaugeSimError, ValueError):
    """An experiment configuration is malformed or inconsistent."""
