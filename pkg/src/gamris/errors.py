"""Exception hierarchy shared by all gamris modules."""


class GamrisError(Exception):
    """Base class for every error raised by gamris."""


class InputError(GamrisError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateChannelError(GamrisError):
    """The augmented channel matrix is numerically zero."""


class DegeneratePairError(GamrisError):
    """Both vectors handed to the pair solver are zero."""


class GeometryError(GamrisError, ValueError):
    """A constellation point lies outside the annulus it should belong to."""


class SizeError(GamrisError, ValueError):
    """An exhaustive search was requested on an input that is too large."""


class ConfigError(GamrisError, ValueError):
    """An experiment configuration is malformed or inconsistent."""
