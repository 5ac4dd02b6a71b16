"""256-bit position token.

Layout (bit 0 is the least significant)::

    [0, 63]     pool id
    [64, 111]   leg slot 0
    [112, 159]  leg slot 1
    [160, 207]  leg slot 2
    [208, 255]  leg slot 3

and inside each 48-bit slot::

    [0, 23]   strike tick, signed (two's complement), |tick| <= 887272
    [24, 39]  width in ticks, unsigned; range_factor = 1.0001 ** (width / 2)
    [40]      is_put
    [41]      is_long
    [42, 45]  ratio (contracts, 1..15)
    [46, 47]  reserved, zero

This layout is self-consistent but not compatible with any deployed contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import CapacityError, EncodingRangeError, MalformedTokenError
from .instrument import DEFAULT_PAIR, MAX_LEGS, Leg, Position, TokenPair

TICK_BASE = 1.0001
_LOG_TICK_BASE = math.log(TICK_BASE)

POOL_ID_BITS = 64
SLOT_BITS = 48
TICK_BITS = 24
WIDTH_BITS = 16
RATIO_BITS = 4

# Ticks are stored in 24 bits but limited to the AMM's price range, which keeps
# every decoded strike a finite positive float.
MAX_STRIKE_TICK = 887_272
MAX_WIDTH = (1 << WIDTH_BITS) - 1
MAX_RATIO = (1 << RATIO_BITS) - 1

_WIDTH_SHIFT = TICK_BITS
_PUT_BIT = 40
_LONG_BIT = 41
_RATIO_SHIFT = 42
_RESERVED_SHIFT = 46
_SLOT_MASK = (1 << SLOT_BITS) - 1


@dataclass(frozen=True)
class PositionToken:
    id: int

    def __post_init__(self) -> None:
        if not 0 <= self.id < (1 << 256):
            raise MalformedTokenError("token id must be a 256-bit unsigned integer")

    def hex(self) -> str:
        return f"{self.id:064x}"

    @classmethod
    def from_hex(cls, text: str) -> "PositionToken":
        text = text.strip().lower().removeprefix("0x")
        if len(text) != 64:
            raise MalformedTokenError(f"expected 64 hex digits, got {len(text)}")
        try:
            return cls(int(text, 16))
        except ValueError as exc:
            raise MalformedTokenError(str(exc)) from exc


def strike_to_tick(strike: float) -> int:
    return round(math.log(strike) / _LOG_TICK_BASE)


def tick_to_strike(tick: int) -> float:
    return TICK_BASE ** tick


def range_factor_to_width(range_factor: float) -> int:
    return round(2 * math.log(range_factor) / _LOG_TICK_BASE)


def width_to_range_factor(width: int) -> float:
    return TICK_BASE ** (width / 2)


def leg_from_ticks(tick: int, width: int, *, is_put: bool, is_long: bool, size: int = 1) -> Leg:
    """A leg whose strike and range survive an encode/decode round trip."""
    return Leg(tick_to_strike(tick), width_to_range_factor(width), is_put, is_long, float(size))


def _encode_leg(leg: Leg) -> int:
    tick = strike_to_tick(leg.strike)
    if abs(tick) > MAX_STRIKE_TICK:
        raise EncodingRangeError(f"strike tick {tick} outside +-{MAX_STRIKE_TICK}")
    width = range_factor_to_width(leg.range_factor)
    if not 0 <= width <= MAX_WIDTH:
        raise EncodingRangeError(f"width {width} outside unsigned {WIDTH_BITS}-bit range")
    ratio = leg.size
    if ratio != int(ratio) or not 1 <= ratio <= MAX_RATIO:
        raise EncodingRangeError(f"leg size {leg.size} is not an integer ratio in 1..{MAX_RATIO}")
    return (
        (tick & ((1 << TICK_BITS) - 1))
        | (width << _WIDTH_SHIFT)
        | (int(leg.is_put) << _PUT_BIT)
        | (int(leg.is_long) << _LONG_BIT)
        | (int(ratio) << _RATIO_SHIFT)
    )


def _decode_leg(slot: int, index: int) -> Leg:
    if slot >> _RESERVED_SHIFT:
        raise MalformedTokenError(f"reserved bits set in leg slot {index}")
    raw_tick = slot & ((1 << TICK_BITS) - 1)
    tick = raw_tick - (1 << TICK_BITS) if raw_tick >> (TICK_BITS - 1) else raw_tick
    if abs(tick) > MAX_STRIKE_TICK:
        raise MalformedTokenError(f"leg slot {index} has strike tick {tick} outside +-{MAX_STRIKE_TICK}")
    width = (slot >> _WIDTH_SHIFT) & MAX_WIDTH
    ratio = (slot >> _RATIO_SHIFT) & MAX_RATIO
    if ratio == 0:
        raise MalformedTokenError(f"leg slot {index} is non-empty but has ratio 0")
    return leg_from_ticks(tick, width, is_put=bool(slot >> _PUT_BIT & 1),
                          is_long=bool(slot >> _LONG_BIT & 1), size=ratio)


def encode(position: Position, pool_id: int) -> PositionToken:
    if not 0 <= pool_id < (1 << POOL_ID_BITS):
        raise EncodingRangeError(f"pool id must fit in {POOL_ID_BITS} bits")
    if len(position.legs) > MAX_LEGS:
        raise CapacityError(f"{len(position.legs)} legs; at most {MAX_LEGS}")
    token = pool_id
    for i, leg in enumerate(position.legs):
        token |= _encode_leg(leg) << (POOL_ID_BITS + i * SLOT_BITS)
    return PositionToken(token)


def decode(token: PositionToken | int, pair: TokenPair = DEFAULT_PAIR) -> tuple[Position, int]:
    """Inverse of :func:`encode`; empty slots are skipped.

    The token does not carry the asset symbols, so ``pair`` is attached as
    given.
    """
    value = token.id if isinstance(token, PositionToken) else int(token)
    if not 0 <= value < (1 << 256):
        raise MalformedTokenError("token id must be a 256-bit unsigned integer")
    pool_id = value & ((1 << POOL_ID_BITS) - 1)
    legs = []
    for i in range(MAX_LEGS):
        slot = (value >> (POOL_ID_BITS + i * SLOT_BITS)) & _SLOT_MASK
        if slot:
            legs.append(_decode_leg(slot, i))
    if not legs:
        raise MalformedTokenError("token encodes no legs")
    return Position(pair, tuple(legs)), pool_id
