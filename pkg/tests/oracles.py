"""Independent reference implementations used by the tests."""

from __future__ import annotations

import math
import random
from fractions import Fraction

import numpy as np
from scipy import integrate, stats

from panopt import pool as pl
from panopt.codec import encode, tick_to_strike
from panopt.errors import PanoptError
from panopt.instrument import DEFAULT_PAIR, Leg, Position


def binomial_call(s: float, k: float, sigma: float, t: float, steps: int = 10_000) -> float:
    """Zero-rate European call on a CRR tree, summed in closed form over terminal nodes."""
    dt = t / steps
    u = math.exp(sigma * math.sqrt(dt))
    d = 1 / u
    p = (1 - d) / (u - d)
    j = np.arange(steps + 1)
    terminal = s * u ** j * d ** (steps - j)
    return float(np.sum(stats.binom.pmf(j, steps, p) * np.maximum(terminal - k, 0.0)))


def quad_theta_integral(s: float, k: float, sigma: float, t: float) -> float:
    """Adaptive quadrature of theta over residual time, written out independently."""

    def theta(tau: float) -> float:
        v = sigma * sigma * tau
        z = math.log(s / k) + v / 2
        return s * sigma / math.sqrt(8 * math.pi * tau) * math.exp(-z * z / (2 * v))

    # tau = w^2 removes the endpoint singularity
    val, _ = integrate.quad(lambda w: 2 * w * theta(w * w), 0, math.sqrt(t), epsabs=0, epsrel=1e-12, limit=200)
    return val


def brute_lp_value(strike: float, r: float, size: float, spot: float) -> float:
    """Liquidity chunk value by integrating the marginal asset holdings.

    Token amounts of a range position follow ``d(asset)/d(sqrt p) = -L/p``;
    here they are obtained by integrating numerically from the upper edge.
    """
    pa, pb = strike / r, strike * r
    sa, sb = math.sqrt(pa), math.sqrt(pb)
    liquidity = size * strike / (sb - sa)
    sp = min(max(math.sqrt(spot), sa), sb)
    asset, _ = integrate.quad(lambda x: liquidity / (x * x), sp, sb)
    numeraire, _ = integrate.quad(lambda x: liquidity, sa, sp)
    return asset * spot + numeraire


def bisect_target(f, lo: float = 0.0, hi: float = 1.0, iters: int = 200) -> float:
    """Root of a sign-changing function by plain bisection."""
    flo = f(lo)
    if flo == 0:
        return lo
    for _ in range(iters):
        mid = (lo + hi) / 2
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return (lo + hi) / 2


class DoubleEntryOracle:
    """Shadow ledger that replays the pool's postings in exact arithmetic."""

    def __init__(self) -> None:
        self.balances: dict[str, Fraction] = {}
        self.seen = 0

    def sync(self, state: pl.PoolState) -> None:
        for p in state.postings[self.seen:]:
            assert p.amount > 0
            amt = Fraction(p.amount)
            self.balances[p.debit] = self.balances.get(p.debit, Fraction(0)) - amt
            self.balances[p.credit] = self.balances.get(p.credit, Fraction(0)) + amt
        self.seen = len(state.postings)

    def total(self) -> Fraction:
        return sum(self.balances.values(), Fraction(0))

    def mismatches(self, state: pl.PoolState, rel: float = 1e-9) -> list[str]:
        actual = state.balances()
        scale = max([1.0] + [abs(float(v)) for v in self.balances.values()])
        bad = []
        for name in set(actual) | set(self.balances):
            want = float(self.balances.get(name, Fraction(0)))
            got = actual.get(name, 0.0)
            if abs(got - want) > rel * scale:
                bad.append(f"{name}: ledger {got} oracle {want}")
        return bad


STRIKE_TICKS = (75_500, 75_700, 76_000, 76_300, 76_500)


def fuzz_pool(n_ops: int, seed: int, check=None) -> tuple[pl.PoolState, dict]:
    """Drive a pool with ``n_ops`` random operations.

    ``check(state, rejected, before_json)`` runs after every attempted
    operation.  Returns the final state and a count of op outcomes.
    """
    rnd = random.Random(seed)
    state = pl.PoolState.create(commission_rate=0.001)
    spot = 2000.0
    lps = ["lp0", "lp1", "lp2"]
    traders = ["t0", "t1", "t2", "t3"]
    counts = {"ok": 0, "rejected": 0}
    for _ in range(n_ops):
        spot = float(min(max(spot * math.exp(rnd.gauss(0, 0.02)), 1500.0), 2700.0))
        before = state.snapshot_json()
        kind = rnd.choices(
            ["deposit", "withdraw", "collateral", "short", "long", "fees", "close"],
            weights=[2, 1, 2, 4, 3, 3, 3])[0]
        try:
            if kind == "deposit":
                pl.deposit(state, rnd.choice(lps), round(rnd.uniform(100, 5000), 2))
            elif kind == "withdraw":
                who = rnd.choice(lps)
                held = state.accounts.get(who, pl.AccountState()).share_tokens
                pl.withdraw(state, who, held * rnd.choice([0.25, 0.5, 1.0]) if held else 1.0)
            elif kind == "collateral":
                pl.deposit_collateral(state, rnd.choice(traders + lps), round(rnd.uniform(50, 2000), 2))
            elif kind in ("short", "long"):
                tick = rnd.choice(STRIKE_TICKS)
                is_put = tick_to_strike(tick) < spot if kind == "short" else rnd.random() < 0.5
                leg = Leg(tick_to_strike(tick), rnd.choice([1.0, 1.05]), is_put, kind == "long",
                          float(rnd.randint(1, 3)))
                pl.mint(state, rnd.choice(traders + lps[:1]), Position(DEFAULT_PAIR, (leg,)), spot,
                        amount=round(rnd.uniform(0.1, 2.0), 3))
            elif kind == "fees":
                if not state.ranges:
                    raise pl.NotFoundError("no ranges yet")
                key = rnd.choice(sorted(state.ranges))
                rng = state.ranges[key]
                bump = rnd.uniform(0, 0.002)
                pl.update_fee_growth(state, key, rng.fg_upper + bump, rng.fg_lower)
            else:
                holders = [(a, t) for a in sorted(state.accounts) for t in sorted(state.accounts[a].positions)]
                if not holders:
                    raise pl.NotFoundError("nothing to close")
                account, token = rnd.choice(holders)
                pl.close_position(state, account, token, spot)
            counts["ok"] += 1
            rejected = False
        except PanoptError:
            counts["rejected"] += 1
            rejected = True
        if check is not None:
            check(state, rejected, before)
    return state, counts


def random_position(rnd: random.Random) -> Position:
    legs = []
    for _ in range(rnd.randint(1, 4)):
        tick = rnd.randint(-887_272, 887_272)
        width = rnd.randint(0, 65_535)
        legs.append(pl_leg(tick, width, rnd.random() < 0.5, rnd.random() < 0.5, rnd.randint(1, 15)))
    return Position(DEFAULT_PAIR, tuple(legs))


def pl_leg(tick: int, width: int, is_put: bool, is_long: bool, ratio: int) -> Leg:
    from panopt.codec import leg_from_ticks
    return leg_from_ticks(tick, width, is_put=is_put, is_long=is_long, size=ratio)


def token_of(position: Position, pool_id: int = 0) -> str:
    return encode(position, pool_id).hex()
