"""Streaming premium along price paths and its Monte Carlo distribution.

Each simulated path owns a random stream derived from ``(seed, path_index)``
so results do not depend on evaluation order or on how paths are split
across worker processes.  Summary statistics use ``math.fsum`` which is
exactly rounded and therefore order independent.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .errors import DomainError
from .pricing import MINUTE, bs_call_price, bs_theta

Estimator = Literal["theta", "tick"]

ZERO_PREMIUM_REL = 1e-12


@dataclass(frozen=True)
class GbmParams:
    s0: float
    sigma: float
    drift: float = 0.0
    dt: float = MINUTE
    steps: int = 7 * 1440
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.s0 > 0 and self.sigma > 0 and self.dt > 0):
            raise DomainError("s0, sigma and dt must be positive")
        if int(self.steps) != self.steps or self.steps < 1:
            raise DomainError("steps must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def horizon(self) -> float:
        return self.dt * self.steps


@dataclass(frozen=True, eq=False)
class PricePath:
    t: np.ndarray
    s: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if t.ndim != 1 or t.shape != s.shape:
            raise DomainError("t and s must be 1-D arrays of equal length")
        if len(t) < 2:
            raise DomainError("a path needs at least two points")
        if t[0] != 0:
            raise DomainError("path times must start at 0")
        if not np.all(np.diff(t) > 0):
            raise DomainError("path times must be strictly increasing")
        if not np.all(s > 0):
            raise DomainError("path prices must be positive")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)

    @classmethod
    def constant(cls, price: float, times) -> "PricePath":
        times = np.asarray(times, dtype=float)
        return cls(times, np.full(times.shape, float(price)))

    def concat(self, other: "PricePath") -> "PricePath":
        """Append ``other``, whose first point must repeat this path's last price."""
        if other.s[0] != self.s[-1]:
            raise DomainError("paths do not join: first price of the tail differs")
        return PricePath(np.concatenate([self.t, self.t[-1] + other.t[1:]]),
                         np.concatenate([self.s, other.s[1:]]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PricePath):
            return NotImplemented
        return np.array_equal(self.t, other.t) and np.array_equal(self.s, other.s)


@dataclass(frozen=True)
class PremiumStats:
    mean: float
    std: float
    cv: float
    frac_zero: float
    frac_ge_2bs: float
    bs_price: float
    n_paths: int
    estimator: str

    def to_dict(self) -> dict:
        return asdict(self)


def path_seed(seed: int, index: int) -> int:
    """64-bit seed of path ``index``: numpy's SeedSequence hash of ``(seed, index)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _log_increments(params: GbmParams, index: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(path_seed(params.seed, index)))
    z = rng.standard_normal(params.steps)
    return (params.drift - 0.5 * params.sigma**2) * params.dt + params.sigma * math.sqrt(params.dt) * z


def _prices(params: GbmParams, index: int) -> np.ndarray:
    s = np.empty(params.steps + 1)
    s[0] = params.s0
    s[1:] = params.s0 * np.exp(np.cumsum(_log_increments(params, index)))
    return s


def simulate_gbm(params: GbmParams, index: int = 0) -> PricePath:
    """Path ``index`` of the geometric Brownian motion described by ``params``."""
    if index < 0:
        raise DomainError("path index must be >= 0")
    return PricePath(np.arange(params.steps + 1) * params.dt, _prices(params, index))


def _theta_sum(s_left: np.ndarray, dts, k: float, sigma: float, tau) -> float:
    return float(np.sum(bs_theta(s_left, k, sigma, tau) * dts))


def _tick_sum(s_left: np.ndarray, dts, k: float, sigma: float, tick_spacing: float) -> float:
    inside = (s_left >= k * (1 - tick_spacing / 2)) & (s_left <= k * (1 + tick_spacing / 2))
    if np.ndim(dts) == 0:
        time_in_range = float(np.count_nonzero(inside)) * dts
    else:
        time_in_range = float(np.sum(np.where(inside, dts, 0.0)))
    return k * sigma**2 / (2 * tick_spacing) * time_in_range


def stream_premium_theta(path: PricePath, k: float, sigma: float, dt_theta=None) -> float:
    """Premium from integrating theta along ``path`` (left-point rule).

    ``dt_theta`` is the residual time plugged into theta at each step: a
    scalar, one value per step, or ``None`` for the step length itself.
    """
    dts = np.diff(path.t)
    tau = dts if dt_theta is None else np.asarray(dt_theta, dtype=float)
    if tau.ndim not in (0, 1) or (tau.ndim == 1 and tau.shape != dts.shape):
        raise DomainError("dt_theta must be a scalar or one value per path step")
    if not np.all(tau > 0):
        raise DomainError("dt_theta must be positive")
    return _theta_sum(path.s[:-1], dts, k, sigma, tau)


def stream_premium_tick(path: PricePath, k: float, sigma: float, tick_spacing: float = 0.006) -> float:
    """Premium as ``k*sigma^2/(2*tick_spacing)`` times the time spent within
    ``[k(1 - tick_spacing/2), k(1 + tick_spacing/2)]``."""
    if not 0 < tick_spacing < 1:
        raise DomainError(f"tick_spacing must be in (0, 1), got {tick_spacing}")
    return _tick_sum(path.s[:-1], np.diff(path.t), k, sigma, tick_spacing)


def _path_premium(params: GbmParams, index: int, k: float, estimator: str,
                  tick_spacing: float, dt_theta: float | None) -> float:
    s = _prices(params, index)[:-1]
    if estimator == "theta":
        return _theta_sum(s, params.dt, k, params.sigma, params.dt if dt_theta is None else dt_theta)
    return _tick_sum(s, params.dt, k, params.sigma, tick_spacing)


def _premium_chunk(args) -> list[float]:
    params, indices, k, estimator, tick_spacing, dt_theta = args
    return [_path_premium(params, i, k, estimator, tick_spacing, dt_theta) for i in indices]


def mc_premiums(params: GbmParams, k: float, n_paths: int, estimator: Estimator = "theta", *,
                tick_spacing: float = 0.006, dt_theta: float | None = None,
                workers: int = 1) -> np.ndarray:
    """Per-path premiums for paths ``0 .. n_paths-1``."""
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    if estimator not in ("theta", "tick"):
        raise DomainError(f"unknown estimator {estimator!r}")
    if not k > 0:
        raise DomainError("strike must be positive")
    if not 0 < tick_spacing < 1:
        raise DomainError("tick_spacing must be in (0, 1)")
    if dt_theta is not None and not dt_theta > 0:
        raise DomainError("dt_theta must be positive")
    if workers <= 1:
        return np.array(_premium_chunk((params, range(n_paths), k, estimator, tick_spacing, dt_theta)))
    bounds = np.linspace(0, n_paths, workers + 1).astype(int)
    jobs = [(params, range(a, b), k, estimator, tick_spacing, dt_theta)
            for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunks = list(pool.map(_premium_chunk, jobs))
    return np.array([p for chunk in chunks for p in chunk])


def premium_stats(premiums, bs_price: float, estimator: Estimator) -> PremiumStats:
    p = [float(x) for x in np.asarray(premiums, dtype=float)]
    n = len(p)
    mean = math.fsum(p) / n
    var = math.fsum((x - mean) ** 2 for x in p) / (n - 1) if n > 1 else 0.0
    std = math.sqrt(var)
    zero_cut = 0.0 if estimator == "tick" else ZERO_PREMIUM_REL * bs_price
    n_zero = sum(1 for x in p if x == 0.0 or x < zero_cut)
    n_big = sum(1 for x in p if x >= 2 * bs_price)
    return PremiumStats(
        mean=mean,
        std=std,
        cv=std / mean if mean > 0 else 0.0,
        frac_zero=n_zero / n,
        frac_ge_2bs=n_big / n,
        bs_price=bs_price,
        n_paths=n,
        estimator=estimator,
    )


def mc_premium_distribution(params: GbmParams, k: float, n_paths: int,
                            estimator: Estimator = "theta", **kwargs) -> PremiumStats:
    """Distribution of the streamed premium over ``n_paths`` GBM paths.

    Keyword arguments are passed to :func:`mc_premiums`.
    """
    premiums = mc_premiums(params, k, n_paths, estimator, **kwargs)
    return premium_stats(premiums, bs_call_price(params.s0, k, params.sigma, params.horizon), estimator)


def cumulative_premiums(params: GbmParams, k: float, n_paths: int, checkpoints,
                        estimator: Estimator = "theta", *, tick_spacing: float = 0.006) -> np.ndarray:
    """Premium accrued by each path up to each checkpoint step.

    Returns an ``(n_paths, len(checkpoints))`` array; used for the coefficient
    of variation as a function of holding time.
    """
    steps = np.asarray(checkpoints, dtype=int)
    if steps.ndim != 1 or np.any(steps < 1) or np.any(steps > params.steps):
        raise DomainError("checkpoints must be step counts in 1..steps")
    out = np.empty((n_paths, len(steps)))
    for i in range(n_paths):
        s = _prices(params, i)[:-1]
        if estimator == "theta":
            rate = bs_theta(s, k, params.sigma, params.dt)
        else:
            inside = (s >= k * (1 - tick_spacing / 2)) & (s <= k * (1 + tick_spacing / 2))
            rate = np.where(inside, k * params.sigma**2 / (2 * tick_spacing), 0.0)
        out[i] = np.cumsum(rate * params.dt)[steps - 1]
    return out


# Discrete-monitoring shift of a barrier (Broadie-Glasserman-Kou), in units of sigma*sqrt(dt).
_BGK_BETA = 0.5826


def no_touch_probability(barrier: float, sigma: float, horizon: float, drift: float = 0.0) -> float:
    """P(log-price stays below ``barrier`` > 0 up to ``horizon``), continuous monitoring.

    The log-price starts at 0 and drifts at ``drift - sigma^2/2``.
    """
    if not (barrier > 0 and sigma > 0 and horizon > 0):
        raise DomainError("barrier, sigma and horizon must be positive")
    mu = drift - 0.5 * sigma**2
    vol = sigma * math.sqrt(horizon)
    return float(ndtr((barrier - mu * horizon) / vol)
                 - math.exp(2 * mu * barrier / sigma**2) * ndtr((-barrier - mu * horizon) / vol))


def strike_for_zero_fraction(params: GbmParams, target: float, tick_spacing: float = 0.006) -> float:
    """OTM call strike whose tick band is never visited with probability ``target``.

    Solves the continuous no-touch probability for the lower band edge and
    moves the barrier by the discrete-monitoring correction for a step of
    ``params.dt``.  This fixes the strike without looking at simulated premiums.
    """
    if not 0 < target < 1:
        raise DomainError("target must be in (0, 1)")
    horizon = params.horizon

    def gap(a: float) -> float:
        return no_touch_probability(a, params.sigma, horizon, params.drift) - target

    hi = params.sigma * math.sqrt(horizon)
    while gap(hi) < 0:
        hi *= 2
    barrier = brentq(gap, 1e-12, hi, xtol=1e-14) - _BGK_BETA * params.sigma * math.sqrt(params.dt)
    return params.s0 * math.exp(barrier) / (1 - tick_spacing / 2)


def read_path_csv(path: str | Path) -> PricePath:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t_years", "price"} <= set(reader.fieldnames):
            raise DomainError("price path CSV needs a 't_years,price' header")
        rows = [(float(r["t_years"]), float(r["price"])) for r in reader]
    if not rows:
        raise DomainError("price path CSV has no rows")
    t, s = zip(*rows)
    return PricePath(np.array(t), np.array(s))


def write_path_csv(path: str | Path, price_path: PricePath) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_years", "price"])
        for t, s in zip(price_path.t, price_path.s):
            w.writerow([repr(float(t)), repr(float(s))])


def write_premiums_csv(path: str | Path, premiums) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "premium"])
        for i, p in enumerate(np.asarray(premiums, dtype=float)):
            w.writerow([i, repr(float(p))])
