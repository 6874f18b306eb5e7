"""Exception hierarchy shared across the package."""


class ProtoPerturbError(Exception):
    """Base class for all package errors."""


class ConfigError(ProtoPerturbError, ValueError):
    """Invalid configuration or incompatible inputs."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class NumericalError(ProtoPerturbError, ArithmeticError):
    """Base for failures of a numerical routine."""


class ZeroVector(NumericalError):
    def __init__(self, message="vector norm below 1e-12", index=None):
        super().__init__(message)
        self.index = index


class DidNotConverge(NumericalError):
    pass


class EmptyClass(ProtoPerturbError, ValueError):
    def __init__(self, class_id):
        super().__init__(f"class {class_id} has no rows")
        self.class_id = class_id


class BadK(ProtoPerturbError, ValueError):
    pass


class NoRelevant(ProtoPerturbError, ValueError):
    pass


class StoreError(ProtoPerturbError, IOError):
    """Malformed or unreadable container file."""


class BadMagic(StoreError):
    pass


class BadVersion(StoreError):
    pass


class Truncated(StoreError):
    pass


class Overlap(StoreError):
    pass
