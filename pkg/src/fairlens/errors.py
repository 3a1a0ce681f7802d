"""Exception hierarchy shared by all fairlens modules."""


class FairlensError(Exception):
    """Base class; the CLI maps any of these to exit code 1."""


class SchemaError(FairlensError, ValueError):
    pass


class UnknownCategoryError(SchemaError):
    pass


class UndefinedProbabilityError(FairlensError, ValueError):
    """Raised when conditioning on an empty subpopulation or a zero-probability event."""


class GraphError(FairlensError, ValueError):
    pass


class OracleTooLargeError(FairlensError, ValueError):
    pass


class CapacityError(FairlensError, ValueError):
    """Dense enumeration would exceed the configured cell cap."""
