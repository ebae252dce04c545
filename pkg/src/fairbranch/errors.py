"""Exception hierarchy shared across the package."""


class FairBranchError(Exception):
    pass


class ConfigurationError(FairBranchError, ValueError):
    """A configuration value violates its documented precondition."""


class SchemaError(FairBranchError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ParseError(FairBranchError, ValueError):
    pass


class SplitError(FairBranchError, ValueError):
    pass


class NumericError(FairBranchError, FloatingPointError):
    """Non-finite values appeared during a forward or backward pass."""


class ShapeError(FairBranchError, ValueError):
    pass


class UndefinedLossError(FairBranchError, ValueError):
    pass


class UndefinedMetricError(FairBranchError, ValueError):
    pass


class ContractError(FairBranchError, RuntimeError):
    """An internal precondition was violated by the caller."""


class TopologyError(FairBranchError, RuntimeError):
    """The network wiring no longer satisfies its structural invariants."""
