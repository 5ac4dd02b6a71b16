"""Perpetual options on concentrated liquidity: payoffs, streaming premia,
pool accounting and margin."""

from .errors import PanoptError
from .instrument import Leg, Position, TokenPair, lp_value, payoff, strategy_preset

__all__ = ["PanoptError", "Leg", "Position", "TokenPair", "lp_value", "payoff", "strategy_preset"]
__version__ = "0.1.0"
