"""Exception types shared across the package."""


class StyleFuseError(Exception):
    """Base class for all package errors."""


class ConfigurationError(StyleFuseError, ValueError):
    """Invalid parameter values (schedule ranges, layer sets, alpha, ...)."""


class ShapeError(StyleFuseError, ValueError):
    """Tensor shape mismatch between operands."""


class OrderingError(StyleFuseError, ValueError):
    """Timestep arguments violate the required ordering."""


class InjectionError(StyleFuseError, ValueError):
    """A feature-injection directive could not be applied."""


class BankError(StyleFuseError, KeyError):
    """Requested step or layer missing from a feature bank."""


class CapabilityError(StyleFuseError, RuntimeError):
    """An optional external adapter (real encoder/codec/metric) is unavailable."""


class PipelineError(StyleFuseError, RuntimeError):
    """A pipeline stage failed; message carries stage and step context."""
