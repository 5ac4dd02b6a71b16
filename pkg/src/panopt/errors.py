"""Exception hierarchy.

Every error raised by the library derives from :class:`PanoptError`.  Errors
caused by bad numeric inputs also derive from :class:`ValueError` so callers
that only care about "bad argument" can catch the builtin.
"""


class PanoptError(Exception):
    """Base class for all library errors."""


class DomainError(PanoptError, ValueError):
    """An input lies outside the domain of the operation."""


class CapacityError(DomainError):
    """A position would need more than four legs."""


class EncodingRangeError(DomainError):
    """A leg field does not fit its bit field in the position token."""


class MalformedTokenError(DomainError):
    """A 256-bit token does not decode to a valid position."""


class UnsupportedStrategyError(DomainError):
    """Unknown composite strategy name."""


class MoneynessError(DomainError):
    """Short legs must be minted out of the money."""


class MarginError(PanoptError):
    """Collateral does not cover the requirement."""


class LiquidityError(PanoptError):
    """The pool cannot supply the requested liquidity."""


class LockedLiquidityError(LiquidityError):
    """Requested withdrawal exceeds the free (undeployed) liquidity."""


class AvailabilityError(LiquidityError):
    """Buying more than the sellers have deployed in a range."""


class DrainedLiquidityError(LiquidityError):
    """A purchase would remove all base liquidity from a range."""


class AccountingError(PanoptError):
    """Ledger invariants or fee snapshots are inconsistent."""


class NotFoundError(PanoptError, KeyError):
    """Unknown account or position."""

    def __str__(self) -> str:  # KeyError repr-quotes its message
        return Exception.__str__(self)


class AuthorizationError(PanoptError):
    """Caller may not act on the position."""


class DegeneratePoolError(DomainError):
    """Utilization denominator is not positive."""


class NoTargetError(DomainError):
    """Collateral and commission curves never cross."""


class ConfigError(PanoptError):
    """A scenario config fails validation."""

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ReplayParseError(PanoptError):
    """An event-log line could not be parsed."""

    def __init__(self, message: str, line: int) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}")
