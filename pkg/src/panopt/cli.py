"""Scenario runner: ``panopt <kind> --config FILE [--seed N] [--out PATH]``.

Exit codes: 0 ok, 1 bad config or usage, 2 domain error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import pricing, risk
from .errors import ConfigError, DomainError, PanoptError
from .instrument import (DEFAULT_TICK_SPACING, STRATEGIES, payoff_curve, position_from_dict,
                         strategy_preset)
from .montecarlo import (GbmParams, mc_premiums, premium_stats, strike_for_zero_fraction)
from .pool import replay

KINDS = ("premium_mc", "payoff", "margin", "pool_replay", "iv", "dte")

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_IO = 0, 1, 2, 3

_MISSING = object()


# -- config validation ---------------------------------------------------------------

class _Block:
    """Typed access to a JSON object that reports errors by field path."""

    def __init__(self, data: Any, path: str) -> None:
        if not isinstance(data, dict):
            raise ConfigError("expected an object", path)
        self.data = data
        self.path = path
        self.seen: set[str] = set()

    def _at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def raw(self, key: str, default: Any = _MISSING) -> Any:
        self.seen.add(key)
        if key not in self.data:
            if default is _MISSING:
                raise ConfigError("required field is missing", self._at(key))
            return default
        return self.data[key]

    def number(self, key: str, default: Any = _MISSING, *, positive: bool = False,
               minimum: float | None = None) -> float:
        value = self.raw(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError("expected a finite number", self._at(key))
        if positive and not value > 0:
            raise ConfigError("must be > 0", self._at(key))
        if minimum is not None and value < minimum:
            raise ConfigError(f"must be >= {minimum}", self._at(key))
        return float(value)

    def integer(self, key: str, default: Any = _MISSING, *, minimum: int | None = None,
                maximum: int | None = None) -> int:
        value = self.raw(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", self._at(key))
        if minimum is not None and value < minimum:
            raise ConfigError(f"must be >= {minimum}", self._at(key))
        if maximum is not None and value > maximum:
            raise ConfigError(f"must be <= {maximum}", self._at(key))
        return value

    def boolean(self, key: str, default: Any = _MISSING) -> bool:
        value = self.raw(key, default)
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", self._at(key))
        return value

    def choice(self, key: str, options, default: Any = _MISSING) -> str:
        value = self.raw(key, default)
        if value not in options:
            raise ConfigError(f"expected one of {list(options)}", self._at(key))
        return value

    def string(self, key: str, default: Any = _MISSING) -> str:
        value = self.raw(key, default)
        if not isinstance(value, str) or not value:
            raise ConfigError("expected a non-empty string", self._at(key))
        return value

    def block(self, key: str, default: Any = _MISSING) -> "_Block":
        return _Block(self.raw(key, default), self._at(key))

    def has(self, key: str) -> bool:
        return key in self.data

    def done(self) -> None:
        extra = sorted(set(self.data) - self.seen)
        if extra:
            raise ConfigError("unknown field", self._at(extra[0]))


# -- scenario runners ----------------------------------------------------------------
# Each runner validates its params block fully, then returns {filename: text}.

def _json_text(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_suffix(suffix) if out.suffix else out.with_name(out.name + suffix)


def _premium_mc(params: _Block, seed: int, out: Path, fmt: str, base_dir: Path):
    s0 = params.number("s0", 100.0, positive=True)
    sigma = params.number("sigma", positive=True)
    drift = params.number("drift", 0.0)
    dt_minutes = params.number("dt_minutes", 1.0, positive=True)
    horizon_days = params.number("horizon_days", 7.0, positive=True)
    n_paths = params.integer("n_paths", minimum=1)
    estimator = params.choice("estimator", ("theta", "tick"), "theta")
    tick_spacing = params.number("tick_spacing", DEFAULT_TICK_SPACING, positive=True)
    workers = params.integer("workers", 1, minimum=1)
    strike_modes = [k for k in ("strike", "log_moneyness", "zero_fraction_target") if params.has(k)]
    if len(strike_modes) != 1:
        raise ConfigError("give exactly one of strike, log_moneyness, zero_fraction_target",
                          params.path)
    mode = strike_modes[0]
    value = params.number(mode, positive=(mode != "log_moneyness"))
    params.done()
    if fmt != "json":
        raise ConfigError("premium_mc writes json stats plus a csv of premiums", "output.format")

    dt = dt_minutes * pricing.MINUTE
    steps = round(horizon_days * 1440 / dt_minutes)
    if steps < 1 or not math.isclose(steps * dt_minutes, horizon_days * 1440, rel_tol=1e-9):
        raise ConfigError("horizon_days must be a whole number of steps", "params.horizon_days")
    gbm = GbmParams(s0, sigma, drift, dt, steps, seed)
    if mode == "strike":
        strike = value
    elif mode == "log_moneyness":
        strike = s0 * math.exp(value)
    else:
        strike = strike_for_zero_fraction(gbm, value, tick_spacing)

    premiums = mc_premiums(gbm, strike, n_paths, estimator, tick_spacing=tick_spacing, workers=workers)
    bs = pricing.bs_call_price(s0, strike, sigma, gbm.horizon)
    stats = premium_stats(premiums, bs, estimator).to_dict()
    stats.update(strike=strike, seed=seed, horizon_years=gbm.horizon, steps=steps)
    return {out: _json_text(stats),
            _sibling(out, ".csv"): _csv_text(["path", "premium"], enumerate(map(float, premiums)))}


def _grid(block: _Block) -> list[float]:
    if block.has("prices"):
        raw = block.raw("prices")
        if not isinstance(raw, list) or not raw:
            raise ConfigError("expected a non-empty list", f"{block.path}.prices")
        for i, p in enumerate(raw):
            if isinstance(p, bool) or not isinstance(p, (int, float)) or not p > 0:
                raise ConfigError("prices must be positive numbers", f"{block.path}.prices[{i}]")
        block.done()
        return [float(p) for p in raw]
    start = block.number("start", positive=True)
    stop = block.number("stop", positive=True)
    num = block.integer("num", minimum=2)
    block.done()
    if stop <= start:
        raise ConfigError("stop must exceed start", f"{block.path}.stop")
    return [float(x) for x in np.linspace(start, stop, num)]


def _payoff(params: _Block, seed: int, out: Path, fmt: str, base_dir: Path):
    tick_spacing = params.number("tick_spacing", DEFAULT_TICK_SPACING, positive=True)
    if params.has("strategy") == params.has("position"):
        raise ConfigError("give exactly one of strategy, position", params.path)
    if params.has("strategy"):
        st = params.block("strategy")
        name = st.choice("name", STRATEGIES)
        spot = st.number("spot", positive=True)
        kwargs = dict(offset=st.number("offset", 0.1, positive=True),
                      wing=st.number("wing", 0.05, positive=True),
                      range_factor=st.number("range_factor", 1.0, minimum=1.0),
                      size=st.number("size", 1.0, positive=True),
                      ratio=st.integer("ratio", 2, minimum=1))
        st.done()
        position = strategy_preset(name, spot, **kwargs)
        entry = params.number("entry_spot", spot, positive=True)
    else:
        raw = params.raw("position")
        if not isinstance(raw, dict):
            raise ConfigError("expected an object", "params.position")
        try:
            position = position_from_dict(raw)
        except DomainError as exc:
            raise ConfigError(str(exc), "params.position") from exc
        entry = params.number("entry_spot", positive=True)
    grid = _grid(params.block("grid"))
    params.done()
    curve = payoff_curve(position, grid, entry, tick_spacing)
    if fmt == "json":
        return {out: _json_text({"entry_spot": entry, "curve": [list(p) for p in curve]})}
    return {out: _csv_text(["price", "profit"], curve)}


def _margin(params: _Block, seed: int, out: Path, fmt: str, base_dir: Path):
    formula = params.choice("formula", ("cboe", "seller", "buyer"))
    if formula == "cboe":
        report = risk.cboe_report(params.number("premium", positive=True),
                                  params.number("spot", positive=True),
                                  params.number("strike", positive=True),
                                  params.boolean("is_put"),
                                  params.number("multiplier", 100.0, minimum=1.0))
    else:
        fn = risk.seller_requirement if formula == "seller" else risk.buyer_requirement
        default_ratio = risk.SELLER_BASE_RATIO if formula == "seller" else risk.BUYER_BASE_RATIO
        report = fn(params.number("notional", minimum=0.0), params.number("itm", 0.0),
                    params.number("premium_accrued", 0.0),
                    params.number("base_ratio", default_ratio, positive=True))
    params.done()
    if fmt != "json":
        raise ConfigError("margin writes json", "output.format")
    return {out: _json_text(report.to_dict())}


def _pool_replay(params: _Block, seed: int, out: Path, fmt: str, base_dir: Path):
    log_path = base_dir / params.string("event_log")
    params.done()
    if fmt != "json":
        raise ConfigError("pool_replay writes a json snapshot plus a csv of utilization", "output.format")
    rows = []

    def step(line_no, state):
        try:
            u = repr(state.utilization())
        except PanoptError:
            u = ""
        rows.append([len(rows) + 1, line_no, state.events[-1]["op"], u])

    with open(log_path) as fh:
        state = replay(fh, on_step=step)
    return {out: state.snapshot_json(),
            _sibling(out, ".csv"): _csv_text(["step", "line", "op", "utilization"], rows)}


def _iv(params: _Block, seed: int, out: Path, fmt: str, base_dir: Path):
    value = pricing.implied_vol(params.number("fee_rate", minimum=0.0),
                                params.number("volume", minimum=0.0),
                                params.number("tick_liquidity", positive=True))
    params.done()
    if fmt != "json":
        raise ConfigError("iv writes json", "output.format")
    return {out: _json_text({"implied_vol": value})}


def _dte(params: _Block, seed: int, out: Path, fmt: str, base_dir: Path):
    sigma = params.number("sigma", positive=True)
    if params.has("range_factor") == params.has("dte_days"):
        raise ConfigError("give exactly one of range_factor, dte_days", params.path)
    if params.has("range_factor"):
        years = pricing.effective_dte(params.number("range_factor", minimum=1.0), sigma)
        result = {"effective_dte_days": years * 365}
    else:
        result = {"range_factor": pricing.range_for_dte(params.number("dte_days", minimum=0.0) / 365, sigma)}
    params.done()
    if fmt != "json":
        raise ConfigError("dte writes json", "output.format")
    return {out: _json_text(result)}


RUNNERS: dict[str, Callable] = {
    "premium_mc": _premium_mc, "payoff": _payoff, "margin": _margin,
    "pool_replay": _pool_replay, "iv": _iv, "dte": _dte,
}
DEFAULT_FORMAT = {"payoff": "csv"}


def run_scenario(kind: str, config: dict, *, seed: int | None = None, out: str | Path | None = None,
                 base_dir: str | Path = ".") -> dict[Path, str]:
    """Validate ``config`` and compute the artifacts; returns ``{path: text}`` without writing."""
    if kind not in RUNNERS:
        raise ConfigError(f"unknown kind; expected one of {list(KINDS)}", "kind")
    root = _Block(config, "")
    if root.has("kind") and root.raw("kind") != kind:
        raise ConfigError(f"config is for {root.raw('kind')!r}, not {kind!r}", "kind")
    cfg_seed = root.integer("seed", 0, minimum=0, maximum=2**64 - 1)
    output = root.block("output", {})
    out_path = output.string("path", None) if output.has("path") else None
    fmt = output.choice("format", ("csv", "json"), DEFAULT_FORMAT.get(kind, "json"))
    output.done()
    params = root.block("params")
    root.done()
    if out is not None:
        out_path = str(out)
    if out_path is None:
        raise ConfigError("no output path; set output.path or pass --out", "output.path")
    if seed is not None and not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer", "seed")
    return RUNNERS[kind](params, cfg_seed if seed is None else seed, Path(out_path), fmt, Path(base_dir))


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors are config errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="panopt", description="Run a pricing, payoff, margin or pool scenario.")
    sub = parser.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} scenario")
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output file (overrides output.path)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config_path = Path(args.config)
    try:
        try:
            text = config_path.read_text()
        except OSError as exc:
            print(f"panopt: cannot read config: {exc}", file=sys.stderr)
            return EXIT_IO
        try:
            config = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON ({exc})") from exc
        artifacts = run_scenario(args.kind, config, seed=args.seed, out=args.out,
                                 base_dir=config_path.parent)
        for path, body in artifacts.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as fh:
                fh.write(body)
    except ConfigError as exc:
        print(f"panopt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PanoptError as exc:
        print(f"panopt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"panopt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in artifacts:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
