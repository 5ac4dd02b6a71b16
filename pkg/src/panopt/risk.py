"""Collateral requirements, utilization and the utilization-linked curves."""

from __future__ import annotations

import bisect
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Sequence

from .errors import DegeneratePoolError, DomainError, NoTargetError, NotFoundError
from .instrument import Leg

if TYPE_CHECKING:
    from .pool import PoolState

SELLER_BASE_RATIO = 0.20
BUYER_BASE_RATIO = 0.10
CBOE_BASE_RATIO = 0.20
CBOE_FLOOR_RATIO = 0.10


@dataclass(frozen=True)
class MarginReport:
    requirement: float
    base_component: float
    itm_component: float
    premium_component: float
    ratio_used: float

    def to_dict(self) -> dict:
        return asdict(self)


def itm_amount(leg: Leg, spot: float) -> float:
    if not spot > 0:
        raise DomainError(f"spot must be positive, got {spot}")
    intrinsic = leg.strike - spot if leg.is_put else spot - leg.strike
    return max(intrinsic, 0.0) * leg.size


def seller_requirement(notional: float, itm: float, premium_accrued: float = 0.0,
                       base_ratio: float = SELLER_BASE_RATIO) -> MarginReport:
    """``max(0, base_ratio*notional + max(itm, 0) - premium_accrued)``."""
    if notional < 0:
        raise DomainError("notional must be >= 0")
    if not 0 < base_ratio <= 1:
        raise DomainError("base_ratio must be in (0, 1]")
    base = base_ratio * notional
    itm_part = max(itm, 0.0)
    return MarginReport(
        requirement=max(0.0, base + itm_part - premium_accrued),
        base_component=base,
        itm_component=itm_part,
        premium_component=0.0 - premium_accrued,
        ratio_used=base_ratio,
    )


def buyer_requirement(notional: float, itm: float, premium_accrued: float = 0.0,
                      base_ratio: float = BUYER_BASE_RATIO) -> MarginReport:
    """``max(0, base_ratio*notional - max(itm, 0) + premium_accrued)``.

    The ITM amount reduces the requirement: an in-the-money long can pay its
    premium out of the exercise proceeds.
    """
    if notional < 0:
        raise DomainError("notional must be >= 0")
    if not 0 < base_ratio <= 1:
        raise DomainError("base_ratio must be in (0, 1]")
    base = base_ratio * notional
    itm_part = max(itm, 0.0)
    return MarginReport(
        requirement=max(0.0, base - itm_part + premium_accrued),
        base_component=base,
        itm_component=0.0 - itm_part,
        premium_component=premium_accrued,
        ratio_used=base_ratio,
    )


def cboe_margin(premium: float, spot: float, strike: float, is_put: bool,
                multiplier: float = 100) -> float:
    """Short option margin under the exchange 20%/10% rule.

    Proceeds plus 20% of the underlying less the out-of-the-money amount,
    floored at proceeds plus 10% of the strike (puts) or of the underlying
    (calls).  Prices are per share; the result is per contract.
    """
    if not (premium > 0 and spot > 0 and strike > 0):
        raise DomainError("premium, spot and strike must be positive")
    if multiplier < 1:
        raise DomainError("multiplier must be >= 1")
    otm = max(spot - strike, 0.0) if is_put else max(strike - spot, 0.0)
    floor_base = strike if is_put else spot
    main = premium + CBOE_BASE_RATIO * spot - otm
    floor = premium + CBOE_FLOOR_RATIO * floor_base
    return max(main, floor) * multiplier


def cboe_report(premium: float, spot: float, strike: float, is_put: bool,
                multiplier: float = 100) -> MarginReport:
    """:func:`cboe_margin` split into components of whichever branch binds."""
    requirement = cboe_margin(premium, spot, strike, is_put, multiplier)
    otm = max(spot - strike, 0.0) if is_put else max(strike - spot, 0.0)
    floor_base = strike if is_put else spot
    main = premium + CBOE_BASE_RATIO * spot - otm
    floor = premium + CBOE_FLOOR_RATIO * floor_base
    if main >= floor:
        return MarginReport(requirement, CBOE_BASE_RATIO * spot * multiplier, 0.0 - otm * multiplier,
                            premium * multiplier, CBOE_BASE_RATIO)
    return MarginReport(requirement, CBOE_FLOOR_RATIO * floor_base * multiplier, 0.0,
                        premium * multiplier, CBOE_FLOOR_RATIO)


def pool_utilization(state: "PoolState") -> float:
    """Locked liquidity over liquidity not deployed to the AMM."""
    free = state.total_liquidity - state.total_notional_value
    if not free > 0:
        raise DegeneratePoolError(
            f"total_liquidity ({state.total_liquidity}) must exceed notional ({state.total_notional_value})")
    return state.total_locked_liquidity / free


def _validate_knots(knots: Sequence[tuple[float, float]], name: str) -> tuple[tuple[float, float], ...]:
    pts = tuple((float(u), float(v)) for u, v in knots)
    if len(pts) < 2:
        raise DomainError(f"{name}: need at least two knots")
    us = [u for u, _ in pts]
    if us[0] != 0.0 or us[-1] != 1.0:
        raise DomainError(f"{name}: knots must span utilization 0 to 1")
    if any(b <= a for a, b in zip(us, us[1:])):
        raise DomainError(f"{name}: knot utilizations must be strictly increasing")
    if not all(math.isfinite(v) for _, v in pts):
        raise DomainError(f"{name}: knot values must be finite")
    return pts


def _interp(knots: tuple[tuple[float, float], ...], u: float) -> float:
    us = [k[0] for k in knots]
    i = bisect.bisect_right(us, u) - 1
    if i >= len(knots) - 1:
        return knots[-1][1]
    (u0, v0), (u1, v1) = knots[i], knots[i + 1]
    if u == u0:
        return v0
    return v0 + (v1 - v0) * (u - u0) / (u1 - u0)


@dataclass(frozen=True)
class UtilizationCurves:
    """Piecewise-linear seller base ratio and commission rate versus utilization.

    The collateral curve must be non-decreasing and the commission curve
    non-increasing; both are checked on construction.
    """

    collateral_curve: tuple[tuple[float, float], ...] = ((0.0, 0.20), (1.0, 1.00))
    commission_curve: tuple[tuple[float, float], ...] = ((0.0, 0.0020), (1.0, 0.0))

    def __post_init__(self) -> None:
        col = _validate_knots(self.collateral_curve, "collateral_curve")
        com = _validate_knots(self.commission_curve, "commission_curve")
        if any(b[1] < a[1] for a, b in zip(col, col[1:])):
            raise DomainError("collateral_curve must be non-decreasing")
        if any(b[1] > a[1] for a, b in zip(com, com[1:])):
            raise DomainError("commission_curve must be non-increasing")
        if not all(0 < v <= 1 for _, v in col):
            raise DomainError("collateral ratios must be in (0, 1]")
        if not all(0 <= v < 1 for _, v in com):
            raise DomainError("commission rates must be in [0, 1)")
        object.__setattr__(self, "collateral_curve", col)
        object.__setattr__(self, "commission_curve", com)

    @classmethod
    def from_config(cls, block: dict) -> "UtilizationCurves":
        kwargs = {}
        for key in ("collateral_curve", "commission_curve"):
            if key in block:
                kwargs[key] = tuple(tuple(p) for p in block[key])
        return cls(**kwargs)

    def to_config(self) -> dict:
        return {"collateral_curve": [list(p) for p in self.collateral_curve],
                "commission_curve": [list(p) for p in self.commission_curve]}


def utilization_curves_eval(curves: UtilizationCurves, u: float) -> tuple[float, float]:
    """(seller base ratio, commission rate) at utilization ``u``."""
    if not 0 <= u <= 1:
        raise DomainError(f"utilization must be in [0, 1], got {u}")
    return _interp(curves.collateral_curve, u), _interp(curves.commission_curve, u)


def _normalized(knots: tuple[tuple[float, float], ...], u: float) -> float:
    values = [v for _, v in knots]
    lo, hi = min(values), max(values)
    return (_interp(knots, u) - lo) / (hi - lo)


def utilization_target(curves: UtilizationCurves) -> float:
    """Utilization where the two curves cross once each is rescaled to [0, 1].

    Both normalized curves are piecewise linear on the union of their knots,
    so the crossing is found exactly by a sign scan and one linear solve.
    When the curves coincide over an interval the leftmost point is returned.
    """
    for knots in (curves.collateral_curve, curves.commission_curve):
        values = [v for _, v in knots]
        if max(values) == min(values):
            raise NoTargetError("a constant curve has no crossing")
    grid = sorted({u for u, _ in curves.collateral_curve} | {u for u, _ in curves.commission_curve})

    def diff(u: float) -> float:
        return _normalized(curves.collateral_curve, u) - _normalized(curves.commission_curve, u)

    prev_u, prev_d = grid[0], diff(grid[0])
    if prev_d == 0:
        return prev_u
    for u in grid[1:]:
        d = diff(u)
        if d == 0:
            return u
        if (d > 0) != (prev_d > 0):
            return prev_u + (u - prev_u) * (-prev_d) / (d - prev_d)
        prev_u, prev_d = u, d
    raise NoTargetError("curves do not cross on [0, 1]")


@dataclass(frozen=True)
class Solvency:
    solvent: bool
    shortfall: float
    collateral: float
    requirement: float
    legs: tuple[MarginReport, ...] = field(default_factory=tuple)


def account_solvent(state: "PoolState", account: str, spot: float) -> Solvency:
    """Compare an account's collateral with the sum of its per-leg requirements.

    Short legs use the utilization-adjusted seller ratio; premium accrued to
    date enters through the requirement formulas.
    """
    if account not in state.accounts:
        raise NotFoundError(f"unknown account {account!r}")
    reports = tuple(state.leg_requirements(account, spot))
    requirement = math.fsum(r.requirement for r in reports)
    collateral = state.collateral_value(account)
    shortfall = max(0.0, requirement - collateral)
    return Solvency(shortfall == 0.0, shortfall, collateral, requirement, reports)
