"""Liquidity ledger: LP shares, option mint/close, fee-growth premia.

Money lives in four kinds of balance, all in numeraire:

* ``AccountState.wallet``: funds outside the pool (starts at 0, may go
  negative, i.e. the account brought money in);
* ``AccountState.deposited``: margin collateral held for the account;
* ``PoolState.total_liquidity``: LP-owned liquidity, split by share tokens;
* ``PoolState.market``: the outside market, which pays swap fees into the
  pool and settles exercise value with option holders.

Every transfer is recorded as a posting ``(debit, credit, amount)``, so the
sum of all balances stays at zero.  Each mutating operation validates its
inputs before touching state, then appends a JSON event; replaying those
events rebuilds an identical state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Literal, Mapping

from . import risk
from .codec import PositionToken, encode, range_factor_to_width, strike_to_tick
from .errors import (AccountingError, AuthorizationError, AvailabilityError, DegeneratePoolError,
                     DomainError, DrainedLiquidityError, LiquidityError, LockedLiquidityError,
                     MarginError, MoneynessError, NotFoundError, PanoptError, ReplayParseError)
from .instrument import DEFAULT_TICK_SPACING, Leg, Position, effective_range_factor, exercise_value, \
    position_from_dict, position_to_dict

Side = Literal["long", "short"]

DEFAULT_COMMISSION_RATE = 0.001


# -- pure fee / liquidity formulas -------------------------------------------------

@dataclass(frozen=True)
class FeeGrowthInputs:
    fg_upper: float
    fg_lower: float
    fg_inside_last: float
    liquidity: float


def total_fees(inputs: FeeGrowthInputs) -> float:
    """``(fg_upper - fg_lower - fg_inside_last) * liquidity``."""
    if inputs.liquidity < 0:
        raise DomainError("liquidity must be >= 0")
    if inputs.liquidity == 0:
        return 0.0
    fees = (inputs.fg_upper - inputs.fg_lower - inputs.fg_inside_last) * inputs.liquidity
    if fees < 0:
        raise AccountingError(f"negative fees {fees}: fee-growth snapshot is ahead of the range")
    return fees


def _dec(x: float) -> Fraction:
    # Shortest round-trip decimal, so 9.9 means 99/10 rather than its binary neighbour.
    return Fraction(repr(float(x)))


def effective_liquidity_factor(position_size: float, base_liquidity: float, side: Side) -> float:
    """``size/(base - size)`` for longs, ``size/(base + size)`` for shorts.

    Evaluated in exact rational arithmetic on the decimal values of the
    inputs, then rounded once.
    """
    if position_size < 0:
        raise DomainError("position_size must be >= 0")
    if side == "long":
        if not base_liquidity > 0:
            raise DomainError("base_liquidity must be positive")
        if position_size >= base_liquidity:
            raise DrainedLiquidityError(
                f"size {position_size} would drain base liquidity {base_liquidity}")
        n, base = _dec(position_size), _dec(base_liquidity)
        return float(n / (base - n))
    if side == "short":
        if base_liquidity < 0:
            raise DomainError("base_liquidity must be >= 0")
        if position_size == 0:
            return 0.0
        n, base = _dec(position_size), _dec(base_liquidity)
        return float(n / (base + n))
    raise DomainError(f"side must be 'long' or 'short', got {side!r}")


def spread(position_size: float, base_liquidity: float) -> float:
    """``size/base``; added to what buyers pay, deducted from what sellers get."""
    if not base_liquidity > 0:
        raise DomainError("base_liquidity must be positive")
    if position_size < 0:
        raise DomainError("position_size must be >= 0")
    return float(_dec(position_size) / _dec(base_liquidity))


def merge_purchase(n1: float, l1: float, n2: float) -> float:
    """Factor of a combined purchase: ``(n1+n2)/(l1-n1-n2)``.

    ``l1`` is the base liquidity at the first purchase and stays frozen, so
    any split of the same total gives the same factor.
    """
    if n1 < 0 or n2 < 0:
        raise DomainError("sizes must be >= 0")
    if not l1 > 0:
        raise DomainError("l1 must be positive")
    n = _dec(n1) + _dec(n2)
    if n >= _dec(l1):
        raise DrainedLiquidityError(f"combined size {float(n)} would drain base liquidity {l1}")
    return float(n / (_dec(l1) - n))


# -- ledger state -------------------------------------------------------------------

def range_key(leg: Leg, tick_spacing: float = DEFAULT_TICK_SPACING) -> str:
    width = range_factor_to_width(effective_range_factor(leg.range_factor, tick_spacing))
    return f"{'P' if leg.is_put else 'C'}:{strike_to_tick(leg.strike)}:{width}"


@dataclass
class RangeLedger:
    sold: float = 0.0
    bought: float = 0.0
    fg_upper: float = 0.0
    fg_lower: float = 0.0
    fg_inside_last: float = 0.0

    @property
    def base_liquidity(self) -> float:
        """Liquidity sellers have deployed into the range."""
        return self.sold

    @property
    def available(self) -> float:
        return self.sold - self.bought

    def to_dict(self) -> dict:
        return {"sold": self.sold, "bought": self.bought, "base_liquidity": self.base_liquidity,
                "fg_upper": self.fg_upper, "fg_lower": self.fg_lower,
                "fg_inside_last": self.fg_inside_last}


@dataclass
class LegState:
    leg: Leg
    range: str
    notional: float
    fg_entry: float
    base_ref: float  # long: l1 frozen at first purchase; short: range liquidity before the mint
    spread_base: float  # denominator of the spread, fixed at creation

    @property
    def side(self) -> Side:
        return "long" if self.leg.is_long else "short"

    def to_dict(self) -> dict:
        return {"leg": {"strike": self.leg.strike, "range_factor": self.leg.range_factor,
                        "is_put": self.leg.is_put, "is_long": self.leg.is_long,
                        "size": self.leg.size},
                "range": self.range, "notional": self.notional, "fg_entry": self.fg_entry,
                "base_ref": self.base_ref, "spread_base": self.spread_base}


@dataclass
class OpenPosition:
    token: PositionToken
    position: Position
    amount: float
    legs: list[LegState]

    def to_dict(self) -> dict:
        return {"token": self.token.hex(), "amount": self.amount,
                "legs": [ls.to_dict() for ls in self.legs]}


@dataclass
class AccountState:
    wallet: float = 0.0
    deposited: float = 0.0
    share_tokens: float = 0.0
    positions: dict[str, OpenPosition] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"wallet": self.wallet, "deposited": self.deposited,
                "share_tokens": self.share_tokens,
                "positions": {k: self.positions[k].to_dict() for k in sorted(self.positions)}}


@dataclass(frozen=True)
class Posting:
    debit: str
    credit: str
    amount: float


@dataclass(frozen=True)
class Settlement:
    token: str
    account: str
    premium_received: float
    premium_paid: float
    exercise_received: float
    exercise_paid: float

    @property
    def net(self) -> float:
        return (self.premium_received - self.premium_paid
                + self.exercise_received - self.exercise_paid)


@dataclass
class PoolState:
    pool_id: int = 0
    commission_rate: float = DEFAULT_COMMISSION_RATE
    curves: risk.UtilizationCurves = field(default_factory=risk.UtilizationCurves)
    dynamic_commission: bool = False
    force_threshold: float = 1.0
    tick_spacing: float = DEFAULT_TICK_SPACING
    total_liquidity: float = 0.0
    total_notional_value: float = 0.0
    total_locked_liquidity: float = 0.0
    total_shares: float = 0.0
    market: float = 0.0
    ranges: dict[str, RangeLedger] = field(default_factory=dict)
    accounts: dict[str, AccountState] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)
    postings: list[Posting] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 0 <= self.commission_rate < 1:
            raise DomainError("commission_rate must be in [0, 1)")
        if not self.force_threshold > 0:
            raise DomainError("force_threshold must be positive")
        if not 0 <= self.pool_id < 2**64:
            raise DomainError("pool_id must fit in 64 bits")

    # configuration and views

    def config(self) -> dict:
        return {"pool_id": self.pool_id, "commission_rate": self.commission_rate,
                "curves": self.curves.to_config(), "dynamic_commission": self.dynamic_commission,
                "force_threshold": self.force_threshold, "tick_spacing": self.tick_spacing}

    @classmethod
    def create(cls, **config) -> "PoolState":
        """New pool whose event log starts with its configuration."""
        state = cls._from_config(config)
        state.events.append({"op": "init", "config": state.config()})
        return state

    @classmethod
    def _from_config(cls, config: Mapping) -> "PoolState":
        config = dict(config)
        curves = config.pop("curves", None)
        if isinstance(curves, Mapping):
            curves = risk.UtilizationCurves.from_config(curves)
        return cls(**config, **({"curves": curves} if curves is not None else {}))

    def account(self, account: str) -> AccountState:
        try:
            return self.accounts[account]
        except KeyError:
            raise NotFoundError(f"unknown account {account!r}") from None

    def share_value(self, account: str) -> float:
        acct = self.accounts.get(account)
        if acct is None or acct.share_tokens == 0:
            return 0.0
        return acct.share_tokens * self.total_liquidity / self.total_shares

    def collateral_value(self, account: str) -> float:
        return self.account(account).deposited + self.share_value(account)

    def account_notional(self, account: str) -> float:
        return math.fsum(ls.notional for op in self.account(account).positions.values() for ls in op.legs)

    def utilization(self) -> float:
        return risk.pool_utilization(self)

    def _clipped_utilization(self) -> float:
        try:
            u = risk.pool_utilization(self)
        except DegeneratePoolError:
            return 1.0
        return min(max(u, 0.0), 1.0)

    def seller_ratio(self) -> float:
        return risk.utilization_curves_eval(self.curves, self._clipped_utilization())[0]

    def current_commission_rate(self) -> float:
        if self.dynamic_commission:
            return risk.utilization_curves_eval(self.curves, self._clipped_utilization())[1]
        return self.commission_rate

    def leg_requirements(self, account: str, spot: float) -> list[risk.MarginReport]:
        """Margin report of every open leg of the account."""
        legs = [ls for op in self.account(account).positions.values() for ls in op.legs]
        return self.requirements(legs, spot)

    def requirements(self, legs: Iterable[LegState], spot: float) -> list[risk.MarginReport]:
        """Seller legs use the utilization-adjusted base ratio."""
        ratio = self.seller_ratio()
        out = []
        for ls in legs:
            scaled = replace(ls.leg, size=ls.notional / ls.leg.strike)
            itm = risk.itm_amount(scaled, spot)
            premium = self._leg_premium(ls) if ls.range in self.ranges else 0.0
            if ls.leg.is_long:
                out.append(risk.buyer_requirement(ls.notional, itm, premium))
            else:
                out.append(risk.seller_requirement(ls.notional, itm, premium, base_ratio=ratio))
        return out

    def _leg_premium(self, ls: LegState, fg_inside: float | None = None) -> float:
        rng = self.ranges[ls.range]
        upper, lower = (rng.fg_upper, rng.fg_lower) if fg_inside is None else (fg_inside, 0.0)
        if ls.leg.is_long:
            liquidity = float(_dec(ls.base_ref) - _dec(ls.notional))
            factor = effective_liquidity_factor(ls.notional, ls.base_ref, "long")
        else:
            liquidity = ls.base_ref + ls.notional
            factor = effective_liquidity_factor(ls.notional, ls.base_ref, "short")
        return total_fees(FeeGrowthInputs(upper, lower, ls.fg_entry, liquidity)) * factor

    def balances(self) -> dict[str, float]:
        out = {"pool": self.total_liquidity, "market": self.market}
        for name, acct in self.accounts.items():
            out[f"wallet:{name}"] = acct.wallet
            out[f"collateral:{name}"] = acct.deposited
        return out

    def snapshot(self) -> dict:
        return {
            "config": self.config(),
            "aggregates": {"total_liquidity": self.total_liquidity,
                           "total_notional_value": self.total_notional_value,
                           "total_locked_liquidity": self.total_locked_liquidity,
                           "total_shares": self.total_shares, "market": self.market},
            "ranges": {k: self.ranges[k].to_dict() for k in sorted(self.ranges)},
            "accounts": {k: self.accounts[k].to_dict() for k in sorted(self.accounts)},
        }

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True, indent=2) + "\n"

    def event_log(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    def check_invariants(self) -> None:
        """Aggregates must equal the sums over open legs."""
        sold: dict[str, list[float]] = {}
        bought: dict[str, list[float]] = {}
        for acct in self.accounts.values():
            for op in acct.positions.values():
                for ls in op.legs:
                    (bought if ls.leg.is_long else sold).setdefault(ls.range, []).append(ls.notional)
        for key, rng in self.ranges.items():
            if rng.sold != math.fsum(sold.get(key, [])) or rng.bought != math.fsum(bought.get(key, [])):
                raise AccountingError(f"range {key} disagrees with its open legs")
            if rng.bought > rng.sold:
                raise AccountingError(f"range {key} has bought > sold")
        if self.total_notional_value != math.fsum(r.sold for r in self.ranges.values()):
            raise AccountingError("total_notional_value != sum of range.sold")
        if self.total_locked_liquidity != math.fsum(r.bought for r in self.ranges.values()):
            raise AccountingError("total_locked_liquidity != sum of range.bought")
        if any(a.share_tokens < 0 for a in self.accounts.values()):
            raise AccountingError("negative share balance")

    # internal mutation helpers

    def _post(self, debit: str, credit: str, amount: float) -> None:
        if amount == 0:
            return
        if amount < 0:
            debit, credit, amount = credit, debit, -amount
        for name, sign in ((debit, -1.0), (credit, 1.0)):
            kind, _, who = name.partition(":")
            if kind == "pool":
                self.total_liquidity += sign * amount
            elif kind == "market":
                self.market += sign * amount
            elif kind == "wallet":
                self.accounts[who].wallet += sign * amount
            elif kind == "collateral":
                self.accounts[who].deposited += sign * amount
            else:  # pragma: no cover
                raise AccountingError(f"unknown ledger account {name!r}")
        self.postings.append(Posting(debit, credit, amount))

    def _recompute(self, keys: Iterable[str]) -> None:
        keys = set(keys)
        sold: dict[str, list[float]] = {k: [] for k in keys}
        bought: dict[str, list[float]] = {k: [] for k in keys}
        for acct in self.accounts.values():
            for op in acct.positions.values():
                for ls in op.legs:
                    if ls.range in keys:
                        (bought if ls.leg.is_long else sold)[ls.range].append(ls.notional)
        for k in keys:
            self.ranges[k].sold = math.fsum(sold[k])
            self.ranges[k].bought = math.fsum(bought[k])
        self.total_notional_value = math.fsum(r.sold for r in self.ranges.values())
        self.total_locked_liquidity = math.fsum(r.bought for r in self.ranges.values())


# -- operations --------------------------------------------------------------------

def _positive(name: str, x: float) -> float:
    x = float(x)
    if not (x > 0 and math.isfinite(x)):
        raise DomainError(f"{name} must be positive, got {x}")
    return x


def _ensure_account(state: PoolState, account: str) -> AccountState:
    if not isinstance(account, str) or not account:
        raise DomainError("account id must be a non-empty string")
    return state.accounts.setdefault(account, AccountState())


def deposit(state: PoolState, account: str, amount: float) -> float:
    """Add LP liquidity; returns the share tokens minted."""
    amount = _positive("amount", amount)
    if state.total_shares == 0:
        shares = amount
    else:
        if not state.total_liquidity > 0:
            raise AccountingError("outstanding shares but no pool value")
        shares = float(_dec(amount) * _dec(state.total_shares) / _dec(state.total_liquidity))
    acct = _ensure_account(state, account)
    state._post(f"wallet:{account}", "pool", amount)
    acct.share_tokens += shares
    state.total_shares += shares
    state.events.append({"op": "deposit", "account": account, "amount": amount})
    return shares


def withdraw(state: PoolState, account: str, shares: float) -> float:
    """Burn shares for their pro-rata value; deployed liquidity cannot leave."""
    shares = _positive("shares", shares)
    acct = state.account(account)
    if shares > acct.share_tokens:
        raise DomainError(f"account holds {acct.share_tokens} shares, asked for {shares}")
    if shares == state.total_shares:
        value = state.total_liquidity
    else:
        value = float(_dec(shares) * _dec(state.total_liquidity) / _dec(state.total_shares))
    free = state.total_liquidity - state.total_notional_value
    if value > free:
        raise LockedLiquidityError(f"withdrawal of {value} exceeds free liquidity {free}")
    state._post("pool", f"wallet:{account}", value)
    acct.share_tokens -= shares
    state.total_shares -= shares
    state.events.append({"op": "withdraw", "account": account, "shares": shares})
    return value


def deposit_collateral(state: PoolState, account: str, amount: float) -> None:
    amount = _positive("amount", amount)
    _ensure_account(state, account)
    state._post(f"wallet:{account}", f"collateral:{account}", amount)
    state.events.append({"op": "deposit_collateral", "account": account, "amount": amount})


def withdraw_collateral(state: PoolState, account: str, amount: float, spot: float) -> None:
    """Return margin collateral, provided the account stays solvent at ``spot``."""
    amount = _positive("amount", amount)
    spot = _positive("spot", spot)
    acct = state.account(account)
    if amount > acct.deposited:
        raise DomainError(f"account has {acct.deposited} collateral, asked for {amount}")
    requirement = math.fsum(r.requirement for r in state.leg_requirements(account, spot))
    if state.collateral_value(account) - amount < requirement:
        raise MarginError(f"withdrawal leaves collateral below requirement {requirement}")
    state._post(f"collateral:{account}", f"wallet:{account}", amount)
    state.events.append({"op": "withdraw_collateral", "account": account, "amount": amount,
                         "spot": spot})


def update_fee_growth(state: PoolState, key: str, fg_upper: float, fg_lower: float) -> float:
    """Set a range's fee-growth accumulators and collect the fees it earned.

    Fees on the liquidity still deployed (``sold - bought``) are paid by the
    market into the pool.  Returns the amount collected.
    """
    if key not in state.ranges:
        raise NotFoundError(f"unknown range {key!r}")
    fg_upper, fg_lower = float(fg_upper), float(fg_lower)
    if not (math.isfinite(fg_upper) and math.isfinite(fg_lower)):
        raise DomainError("fee growth must be finite")
    rng = state.ranges[key]
    inside = fg_upper - fg_lower
    if inside < rng.fg_inside_last:
        raise AccountingError(f"fee growth inside {key} decreased from {rng.fg_inside_last} to {inside}")
    fees = total_fees(FeeGrowthInputs(fg_upper, fg_lower, rng.fg_inside_last, rng.available))
    state._post("market", "pool", fees)
    rng.fg_upper, rng.fg_lower, rng.fg_inside_last = fg_upper, fg_lower, inside
    state.events.append({"op": "fee_growth", "range": key, "fg_upper": fg_upper, "fg_lower": fg_lower})
    return fees


def _weighted(a: float, wa: float, b: float, wb: float) -> float:
    return float((_dec(a) * _dec(wa) + _dec(b) * _dec(wb)) / (_dec(wa) + _dec(wb)))


def mint(state: PoolState, account: str, position: Position, spot: float, amount: float = 1.0,
         side: Literal["any", "short", "long"] = "any") -> float:
    """Open ``amount`` units of ``position``; returns the commission charged.

    Leg sizes are integer ratios (they are encoded in the token); the leg
    notional is ``amount * size * strike``.  Minting a token the account
    already holds merges into it.
    """
    spot = _positive("spot", spot)
    amount = _positive("amount", amount)
    if side != "any" and any(leg.is_long != (side == "long") for leg in position.legs):
        raise DomainError(f"mint_{side} needs all legs {side}")
    token = encode(position, state.pool_id)
    if not isinstance(account, str) or not account:
        raise DomainError("account id must be a non-empty string")
    acct = state.accounts.get(account, AccountState())
    existing = acct.positions.get(token.hex())

    # validate everything against a scratch view before mutating
    new_legs: list[LegState] = []
    add_sold: dict[str, float] = {}
    add_bought: dict[str, float] = {}
    free = state.total_liquidity - state.total_notional_value
    for leg in position.legs:
        notional = amount * leg.size * leg.strike
        key = range_key(leg, state.tick_spacing)
        rng = state.ranges.get(key, RangeLedger())
        if leg.is_long:
            taken = add_bought.get(key, 0.0)
            available = rng.available + add_sold.get(key, 0.0) - taken
            if notional > available:
                raise AvailabilityError(f"range {key} has {available} available, asked for {notional}")
            new_legs.append(LegState(leg, key, notional, rng.fg_inside_last, available, available))
            add_bought[key] = taken + notional
        else:
            if leg.is_put and not leg.strike < spot:
                raise MoneynessError(f"put strike {leg.strike} is not below spot {spot}")
            if not leg.is_put and not leg.strike > spot:
                raise MoneynessError(f"call strike {leg.strike} is not above spot {spot}")
            new_legs.append(LegState(leg, key, notional, rng.fg_inside_last,
                                     rng.available + add_sold.get(key, 0.0) - add_bought.get(key, 0.0),
                                     free - math.fsum(add_sold.values())))
            add_sold[key] = add_sold.get(key, 0.0) + notional
    if state.total_notional_value + math.fsum(add_sold.values()) > state.total_liquidity:
        raise LiquidityError("pool liquidity cannot cover the new notional")

    if existing is not None:
        merged = []
        for old, new in zip(existing.legs, new_legs):
            n = old.notional + new.notional
            if old.leg.is_long:
                merge_purchase(old.notional, old.base_ref, new.notional)
            merged.append(replace(old, notional=n,
                                  fg_entry=_weighted(old.fg_entry, old.notional, new.fg_entry, new.notional)))
        candidate = merged
    else:
        for ls in new_legs:
            if ls.leg.is_long:
                effective_liquidity_factor(ls.notional, ls.base_ref, "long")
        candidate = new_legs

    short_notional = math.fsum(ls.notional for ls in new_legs if not ls.leg.is_long)
    long_notional = math.fsum(ls.notional for ls in new_legs if ls.leg.is_long)
    rate = state.current_commission_rate()
    lp_waiver = (short_notional > 0 and long_notional == 0
                 and state.share_value(account) >= math.fsum(
                     ls.notional for op in acct.positions.values() for ls in op.legs) + short_notional)
    commission = 0.0 if lp_waiver else rate * (short_notional + long_notional)

    # margin after the mint, evaluated with the merged legs
    held = [ls for k, op in acct.positions.items() if k != token.hex() for ls in op.legs]
    requirement = math.fsum(r.requirement for r in state.requirements(held + candidate, spot))
    collateral = acct.deposited + state.share_value(account)
    if collateral - commission < requirement:
        raise MarginError(f"collateral {collateral - commission} after commission "
                          f"is below requirement {requirement}")

    # commit
    acct = state.accounts.setdefault(account, acct)
    for key in set(add_sold) | set(add_bought):
        state.ranges.setdefault(key, RangeLedger())
    if existing is not None:
        existing.legs = candidate
        existing.amount = existing.amount + amount
    else:
        acct.positions[token.hex()] = OpenPosition(token, position, amount, candidate)
    state._recompute(set(add_sold) | set(add_bought))
    state._post(f"collateral:{account}", "pool", commission)
    state.events.append({"op": "mint", "account": account, "position": position_to_dict(position),
                         "spot": spot, "amount": amount, "side": side})
    return commission


def mint_short(state: PoolState, account: str, position: Position, spot: float,
               amount: float = 1.0) -> float:
    return mint(state, account, position, spot, amount, side="short")


def mint_long(state: PoolState, account: str, position: Position, spot: float,
              amount: float = 1.0) -> float:
    return mint(state, account, position, spot, amount, side="long")


def _find(state: PoolState, account: str, token: PositionToken | str) -> OpenPosition:
    key = token.hex() if isinstance(token, PositionToken) else PositionToken.from_hex(token).hex()
    acct = state.accounts.get(account)
    if acct is None or key not in acct.positions:
        raise NotFoundError(f"account {account!r} holds no position {key}")
    return acct.positions[key]


def premium_owed(state: PoolState, account: str, token: PositionToken | str,
                 fee_growth: Mapping[str, float] | None = None) -> float:
    """Raw premium accrued by the position, before spread.

    Long legs owe it, short legs are owed it.  ``fee_growth`` optionally maps
    range keys to a hypothetical fee growth inside the range.
    """
    op = _find(state, account, token)
    fee_growth = fee_growth or {}
    return math.fsum(state._leg_premium(ls, fee_growth.get(ls.range)) for ls in op.legs)


def _leg_spread(ls: LegState) -> float:
    if ls.leg.is_long:
        return spread(ls.notional, ls.base_ref)
    return spread(ls.notional, ls.spread_base) if ls.spread_base > 0 else 1.0


def _far_otm(ls: LegState, spot: float, threshold: float, tick_spacing: float) -> bool:
    width = 2 * math.log(effective_range_factor(ls.leg.range_factor, tick_spacing))
    distance = math.log(spot / ls.leg.strike) if ls.leg.is_put else math.log(ls.leg.strike / spot)
    return distance >= threshold * width


def close_position(state: PoolState, account: str, token: PositionToken | str, spot: float,
                   fee_growth: Mapping[str, tuple[float, float]] | None = None,
                   force: bool = False, caller: str | None = None) -> Settlement:
    """Settle and remove a position.

    Short legs receive premium less spread and pay any exercise value; long
    legs receive exercise value and pay premium plus spread.  ``fee_growth``
    maps range keys to ``(fg_upper, fg_lower)`` and is applied first.

    A caller other than the owner may close only with ``force`` and only if
    it holds pool shares, every leg is long, and each is out of the money by
    at least ``force_threshold`` range widths.
    """
    spot = _positive("spot", spot)
    op = _find(state, account, token)
    caller = account if caller is None else caller
    if caller != account:
        if not force:
            raise AuthorizationError(f"{caller!r} does not own the position")
        if state.accounts.get(caller) is None or state.accounts[caller].share_tokens <= 0:
            raise AuthorizationError("forced exercise is reserved for liquidity providers")
        if not all(ls.leg.is_long and _far_otm(ls, spot, state.force_threshold, state.tick_spacing)
                   for ls in op.legs):
            raise AuthorizationError("position is not far enough out of the money to force")
    for ls in op.legs:
        if not ls.leg.is_long:
            rng = state.ranges[ls.range]
            bought_elsewhere = rng.bought - math.fsum(
                o.notional for o in op.legs if o.leg.is_long and o.range == ls.range)
            if rng.sold - ls.notional < bought_elsewhere:
                raise LiquidityError(f"range {ls.range}: liquidity is still bought by other accounts")
    for key, (upper, lower) in sorted((fee_growth or {}).items()):
        if key not in state.ranges:
            raise NotFoundError(f"unknown range {key!r}")
        if upper - lower < state.ranges[key].fg_inside_last:
            raise AccountingError(f"fee growth inside {key} decreased")

    for key, (upper, lower) in sorted((fee_growth or {}).items()):
        update_fee_growth(state, key, upper, lower)

    flows = {"premium_received": [], "premium_paid": [], "exercise_received": [], "exercise_paid": []}
    for ls in op.legs:
        premium = state._leg_premium(ls)
        scaled = replace(ls.leg, size=ls.notional / ls.leg.strike)
        ev = exercise_value(scaled, spot, state.tick_spacing)
        s = _leg_spread(ls)
        if ls.leg.is_long:
            flows["premium_paid"].append(premium * (1 + s))
            flows["exercise_received"].append(ev)
        else:
            flows["premium_received"].append(premium * max(1 - s, 0.0))
            flows["exercise_paid"].append(ev)
    totals = {k: math.fsum(v) for k, v in flows.items()}
    settlement = Settlement(op.token.hex(), account, **totals)

    del state.accounts[account].positions[op.token.hex()]
    state._recompute({ls.range for ls in op.legs})
    state._post("pool", f"collateral:{account}", totals["premium_received"])
    state._post(f"collateral:{account}", "pool", totals["premium_paid"])
    state._post("market", f"collateral:{account}", totals["exercise_received"])
    state._post(f"collateral:{account}", "market", totals["exercise_paid"])
    state.events.append({"op": "close", "account": account, "token": op.token.hex(), "spot": spot,
                         "force": force, "caller": caller})
    return settlement


# -- replay ------------------------------------------------------------------------

def apply_event(state: PoolState, event: Mapping) -> None:
    op = event["op"]
    if op == "deposit":
        deposit(state, event["account"], event["amount"])
    elif op == "withdraw":
        withdraw(state, event["account"], event["shares"])
    elif op == "deposit_collateral":
        deposit_collateral(state, event["account"], event["amount"])
    elif op == "withdraw_collateral":
        withdraw_collateral(state, event["account"], event["amount"], event["spot"])
    elif op == "fee_growth":
        update_fee_growth(state, event["range"], event["fg_upper"], event["fg_lower"])
    elif op == "mint":
        mint(state, event["account"], position_from_dict(event["position"]), event["spot"],
             event.get("amount", 1.0), event.get("side", "any"))
    elif op == "close":
        close_position(state, event["account"], event["token"], event["spot"],
                       force=event.get("force", False), caller=event.get("caller"))
    else:
        raise KeyError(f"unknown op {op!r}")


def replay(lines: Iterable[str], on_step=None) -> PoolState:
    """Rebuild a pool from a JSON-lines event log.

    Blank lines are ignored.  An ``init`` event may only appear first.
    ``on_step(line_no, state)`` is called after each applied event.
    """
    state: PoolState | None = None
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            event = json.loads(line)
            if not isinstance(event, dict) or "op" not in event:
                raise ValueError("event must be an object with an 'op' field")
        except ValueError as exc:
            raise ReplayParseError(str(exc), line_no) from exc
        if event["op"] == "init":
            if state is not None:
                raise ReplayParseError("init must be the first event", line_no)
            try:
                state = PoolState.create(**event["config"])
            except (KeyError, TypeError, PanoptError) as exc:
                raise ReplayParseError(f"bad init config: {exc}", line_no) from exc
            continue
        if state is None:
            state = PoolState()
        try:
            apply_event(state, event)
            state.check_invariants()
        except (KeyError, TypeError) as exc:
            if isinstance(exc, NotFoundError):
                raise AccountingError(f"line {line_no}: {exc}") from exc
            raise ReplayParseError(f"malformed event: {exc}", line_no) from exc
        except PanoptError as exc:
            raise AccountingError(f"line {line_no}: {exc}") from exc
        if on_step is not None:
            on_step(line_no, state)
    return state if state is not None else PoolState()
