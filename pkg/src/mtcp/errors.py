"""Exception types raised across the package."""


class MTCPError(Exception):
    """Base class for all package errors."""

    code = "error"


class AsymmetricKernel(MTCPError, ValueError):
    code = "AsymmetricKernel"


class ZeroMass(MTCPError, ValueError):
    code = "ZeroMass"


class WindowTooSmall(MTCPError, ValueError):
    code = "WindowTooSmall"


class SimultaneousEvents(MTCPError):
    """Two sampled events share a timestamp."""

    code = "SimultaneousEvents"


class AncestryDied(MTCPError):
    code = "AncestryDied"


class EitherAncestryDied(AncestryDied):
    code = "EitherAncestryDied"


class PreconditionViolated(MTCPError, ValueError):
    code = "PreconditionViolated"


class EpsilonTooSmall(MTCPError, ValueError):
    code = "EpsilonTooSmall"


class WindowLeakTooLarge(MTCPError):
    code = "WindowLeakTooLarge"


class SchemaMismatch(MTCPError, ValueError):
    code = "SchemaMismatch"


class ConfigError(MTCPError, ValueError):
    code = "ConfigParse"


class SupercriticalityCheckFailed(MTCPError):
    code = "SupercriticalityCheckFailed"


class UnknownSubcommand(MTCPError):
    code = "UnknownSubcommand"
