"""Zero-rate Black-Scholes pieces and range/volatility conversions.

All functions take ``t`` and ``sigma`` in years and per-sqrt-year.  ``bs_theta``
and ``bs_call_price`` accept numpy arrays for ``s`` and ``t``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from .errors import DomainError

MINUTE = 1.0 / 525_600  # one minute in years (365-day year)
DAY = 1.0 / 365


def _require_positive(name: str, value) -> None:
    if not np.all(np.asarray(value) > 0):
        raise DomainError(f"{name} must be positive")


def bs_theta(s, k: float, sigma: float, t):
    """Time decay of a zero-rate call, as a positive accrual rate.

    ``s * sigma / sqrt(8*pi*t) * exp(-(ln(s/k) + sigma^2 t/2)^2 / (2 sigma^2 t))``
    which is ``dC/dt`` with ``t`` the time to expiry.
    """
    _require_positive("s", s)
    _require_positive("k", k)
    _require_positive("sigma", sigma)
    _require_positive("t", t)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    var = sigma * sigma * t
    z = np.log(s / k) + 0.5 * var
    out = s * sigma / np.sqrt(8 * math.pi * t) * np.exp(-z * z / (2 * var))
    return float(out) if out.ndim == 0 else out


def bs_call_price(s, k: float, sigma: float, t):
    """Zero-rate Black-Scholes call; intrinsic value at ``t == 0``."""
    _require_positive("s", s)
    _require_positive("k", k)
    _require_positive("sigma", sigma)
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be >= 0")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    vol = sigma * np.sqrt(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.log(s / k) / vol + 0.5 * vol
        price = s * ndtr(d1) - k * ndtr(d1 - vol)
    price = np.where(vol > 0, price, np.maximum(s - k, 0.0))
    return float(price) if price.ndim == 0 else price


def effective_dte(r: float, sigma: float) -> float:
    """Days-to-expiry equivalent (in years) of a range with factor ``r``.

    ``(2*pi/sigma^2) * ((sqrt(r)-1)/(sqrt(r)+1))^2``, evaluated through
    ``tanh(ln(r)/4)`` to avoid cancellation near ``r = 1``.
    """
    if not r >= 1:
        raise DomainError(f"range factor must be >= 1, got {r}")
    _require_positive("sigma", sigma)
    q = math.tanh(math.log(r) / 4)
    return 2 * math.pi / sigma**2 * q * q


def max_effective_dte(sigma: float) -> float:
    """Supremum of :func:`effective_dte` as ``r -> inf``."""
    _require_positive("sigma", sigma)
    return 2 * math.pi / sigma**2


def range_for_dte(t: float, sigma: float) -> float:
    """Range factor whose effective expiry is ``t``; inverse of :func:`effective_dte`."""
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t}")
    _require_positive("sigma", sigma)
    q = math.sqrt(t * sigma**2 / (2 * math.pi))
    if q >= 1:
        raise DomainError(f"t={t} exceeds the largest effective expiry {max_effective_dte(sigma)}")
    return math.exp(4 * math.atanh(q))


def gamma_cap(k: float, r: float) -> float:
    """Maximum gamma of a range position, ``2 / (k * pi * ln r)``."""
    _require_positive("k", k)
    if not r > 1:
        raise DomainError(f"gamma cap needs r > 1, got {r}")
    return 2 / (k * math.pi * math.log(r))


def implied_vol(fee_rate: float, volume: float, tick_liquidity: float) -> float:
    """Volatility implied by fee income: ``2 * fee_rate * sqrt(volume / tick_liquidity)``.

    ``volume`` and ``tick_liquidity`` must use the same time unit for the
    result to be per that unit's square root.
    """
    if fee_rate < 0 or volume < 0:
        raise DomainError("fee_rate and volume must be >= 0")
    if not tick_liquidity > 0:
        raise DomainError("tick_liquidity must be positive")
    return 2 * fee_rate * math.sqrt(volume / tick_liquidity)


def theta_integral(s: float, k: float, sigma: float, t: float, n: int = 4096) -> float:
    """Integrate theta at constant price over residual times in ``(0, t]``.

    Midpoint rule in ``u`` with ``tau = t*u^2``; the substitution removes the
    ``tau^-1/2`` singularity of the at-the-money integrand.  Converges to the
    time value ``bs_call_price(s, k, sigma, t) - max(s - k, 0)``, which is
    the full call price when ``s <= k``.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    _require_positive("t", t)
    u = (np.arange(n) + 0.5) / n
    tau = t * u * u
    weights = 2 * t * u / n
    return math.fsum(bs_theta(s, k, sigma, tau) * weights)
