"""Option legs backed by concentrated liquidity.

A leg is a chunk of liquidity deployed on the price range ``[K/r, K*r]``.
Above the range the chunk is entirely numeraire, below it entirely asset.
A short leg holds the chunk, a long leg is the mirror image (liquidity
pulled out of the range), so its profit is the negative of the short's.

Puts are valued in numeraire.  Calls are valued in asset units and converted
at spot, which is exactly the put on the inverted pair (strike ``1/K``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .errors import CapacityError, DomainError, UnsupportedStrategyError

MAX_LEGS = 4

# 0.3% fee tier; used as the width of a "single tick" (r == 1) range.
DEFAULT_TICK_SPACING = 0.006


@dataclass(frozen=True)
class TokenPair:
    numeraire: str
    asset: str

    def __post_init__(self) -> None:
        if self.numeraire == self.asset:
            raise DomainError("numeraire and asset must differ")

    def inverted(self) -> "TokenPair":
        return TokenPair(numeraire=self.asset, asset=self.numeraire)


DEFAULT_PAIR = TokenPair("DAI", "ETH")


@dataclass(frozen=True)
class Leg:
    """One put or call on the range ``[strike/range_factor, strike*range_factor]``.

    ``size`` counts contracts: a put of size n locks ``n*strike`` numeraire,
    a call of size n locks n units of asset.
    """

    strike: float
    range_factor: float = 1.0
    is_put: bool = True
    is_long: bool = False
    size: float = 1.0

    def __post_init__(self) -> None:
        if not (self.strike > 0 and math.isfinite(self.strike)):
            raise DomainError(f"strike must be positive, got {self.strike}")
        if not (self.range_factor >= 1 and math.isfinite(self.range_factor)):
            raise DomainError(f"range_factor must be >= 1, got {self.range_factor}")
        if not (self.size >= 0 and math.isfinite(self.size)):
            raise DomainError(f"size must be >= 0, got {self.size}")

    @property
    def notional(self) -> float:
        """Numeraire value relocated by the leg (``size * strike``)."""
        return self.size * self.strike

    def price_range(self, tick_spacing: float = DEFAULT_TICK_SPACING) -> tuple[float, float]:
        r = effective_range_factor(self.range_factor, tick_spacing)
        return self.strike / r, self.strike * r


@dataclass(frozen=True)
class Position:
    pair: TokenPair
    legs: tuple[Leg, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "legs", tuple(self.legs))
        if not self.legs:
            raise DomainError("a position needs at least one leg")
        if len(self.legs) > MAX_LEGS:
            raise CapacityError(f"{len(self.legs)} legs; at most {MAX_LEGS} fit in one token")

    @property
    def notional(self) -> float:
        return math.fsum(leg.notional for leg in self.legs)


def effective_range_factor(range_factor: float, tick_spacing: float = DEFAULT_TICK_SPACING) -> float:
    """Ranges narrower than one tick spacing (log-width ``tick_spacing``) are widened to it."""
    if not 0 < tick_spacing < 1:
        raise DomainError(f"tick_spacing must be in (0, 1), got {tick_spacing}")
    return max(range_factor, math.exp(tick_spacing / 2))


def lp_value(leg: Leg, spot: float, tick_spacing: float = DEFAULT_TICK_SPACING) -> float:
    """Numeraire value of the liquidity chunk behind ``leg`` at ``spot``.

    Liquidity ``L`` is fixed so the chunk is worth ``size*K`` numeraire above
    the range, which also makes it exactly ``size`` asset below the range.
    """
    if not spot > 0:
        raise DomainError(f"spot must be positive, got {spot}")
    lower, upper = leg.price_range(tick_spacing)
    if spot >= upper:
        return leg.size * leg.strike
    if spot <= lower:
        return leg.size * spot
    sa, sb, sp = math.sqrt(lower), math.sqrt(upper), math.sqrt(spot)
    liquidity = leg.size * leg.strike / (sb - sa)
    asset = liquidity * (1 / sp - 1 / sb)
    numeraire = liquidity * (sp - sa)
    return asset * spot + numeraire


def exercise_value(leg: Leg, spot: float, tick_spacing: float = DEFAULT_TICK_SPACING) -> float:
    """Value the chunk has lost versus its out-of-the-money composition.

    Puts: ``size*K - V(S)``; calls: ``size*S - V(S)``.  Reduces to the usual
    ``max(K-S, 0)`` / ``max(S-K, 0)`` times size for a single-tick range.
    """
    v = lp_value(leg, spot, tick_spacing)
    reference = leg.size * (leg.strike if leg.is_put else spot)
    return max(reference - v, 0.0)


def leg_payoff(leg: Leg, spot: float, entry_spot: float,
               tick_spacing: float = DEFAULT_TICK_SPACING) -> float:
    if not entry_spot > 0:
        raise DomainError(f"entry_spot must be positive, got {entry_spot}")
    now = lp_value(leg, spot, tick_spacing)
    then = lp_value(leg, entry_spot, tick_spacing)
    if leg.is_put:
        pnl = now - then
    else:
        pnl = (now / spot - then / entry_spot) * spot
    return -pnl if leg.is_long else pnl


def payoff(position: Position, spot: float, entry_spot: float,
           tick_spacing: float = DEFAULT_TICK_SPACING) -> float:
    """Profit in numeraire of holding ``position`` from ``entry_spot`` to ``spot``."""
    if not position.legs:
        raise DomainError("empty position")
    return math.fsum(leg_payoff(leg, spot, entry_spot, tick_spacing) for leg in position.legs)


def payoff_curve(position: Position, grid: Iterable[float], entry_spot: float,
                 tick_spacing: float = DEFAULT_TICK_SPACING) -> list[tuple[float, float]]:
    prices = list(grid)
    if not prices:
        raise DomainError("price grid is empty")
    return [(p, payoff(position, p, entry_spot, tick_spacing)) for p in prices]


STRATEGIES = (
    "straddle", "strangle", "iron_condor", "jade_lizard",
    "ratio_spread", "bats", "zebra", "spiked_lizard",
)


def strategy_preset(
    name: str,
    spot: float,
    *,
    offset: float = 0.1,
    wing: float = 0.05,
    range_factor: float = 1.0,
    size: float = 1.0,
    ratio: int = 2,
    pair: TokenPair = DEFAULT_PAIR,
) -> Position:
    """Build one of the named composite positions around ``spot``.

    ``offset`` is the relative distance of the OTM (or ITM, for zebra) strikes
    from spot and ``wing`` the relative distance of protective/ratio legs
    beyond those.  ``ratio`` is the short multiplier of the ratio spreads and
    the number of long ITM calls in a zebra.
    """
    if not spot > 0:
        raise DomainError(f"spot must be positive, got {spot}")
    if not (0 < offset < 1 and 0 < wing < 1):
        raise DomainError("offset and wing must be in (0, 1)")
    if ratio < 1:
        raise DomainError("ratio must be >= 1")

    def put(k: float, long: bool, n: float = size) -> Leg:
        return Leg(k, range_factor, is_put=True, is_long=long, size=n)

    def call(k: float, long: bool, n: float = size) -> Leg:
        return Leg(k, range_factor, is_put=False, is_long=long, size=n)

    lo = spot * (1 - offset)
    hi = spot * (1 + offset)
    lo_wing = lo * (1 - wing)
    hi_wing = hi * (1 + wing)

    legs: Sequence[Leg]
    if name == "straddle":
        legs = [put(spot, False), call(spot, False)]
    elif name == "strangle":
        legs = [put(lo, False), call(hi, False)]
    elif name == "iron_condor":
        legs = [put(lo_wing, True), put(lo, False), call(hi, False), call(hi_wing, True)]
    elif name == "jade_lizard":
        legs = [put(lo, False), call(hi, False), call(hi_wing, True)]
    elif name == "ratio_spread":
        legs = [put(lo, True), put(lo_wing, False, size * ratio)]
    elif name == "bats":
        legs = [put(lo, True), put(lo_wing, False, size * ratio),
                call(hi, True), call(hi_wing, False, size * ratio)]
    elif name == "zebra":
        legs = [call(spot, False)] + [call(lo, True) for _ in range(ratio)]
    elif name == "spiked_lizard":
        legs = [put(lo, False), call(hi, False), call(hi_wing, True), call(spot, True)]
    else:
        raise UnsupportedStrategyError(f"unknown strategy {name!r}; expected one of {STRATEGIES}")
    return Position(pair, tuple(legs))


def position_to_dict(position: Position) -> dict:
    return {
        "pair": {"numeraire": position.pair.numeraire, "asset": position.pair.asset},
        "legs": [
            {"strike": leg.strike, "range_factor": leg.range_factor, "is_put": leg.is_put,
             "is_long": leg.is_long, "size": leg.size}
            for leg in position.legs
        ],
    }


def position_from_dict(data: dict) -> Position:
    try:
        pair = TokenPair(str(data["pair"]["numeraire"]), str(data["pair"]["asset"]))
        legs = tuple(
            Leg(float(d["strike"]), float(d.get("range_factor", 1.0)), bool(d["is_put"]),
                bool(d["is_long"]), float(d.get("size", 1.0)))
            for d in data["legs"]
        )
    except (KeyError, TypeError) as exc:
        raise DomainError(f"malformed position: {exc}") from exc
    return Position(pair, legs)


def flip(leg: Leg) -> Leg:
    """Same leg with the opposite side."""
    return replace(leg, is_long=not leg.is_long)
