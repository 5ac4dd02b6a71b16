import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from panopt import cli, pricing
from panopt.errors import ConfigError

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

SMALL_MC = {"kind": "premium_mc", "seed": 3,
            "params": {"s0": 100.0, "sigma": 1.0, "dt_minutes": 10, "horizon_days": 1, "n_paths": 50,
                       "estimator": "tick", "strike": 101.0},
            "output": {"path": "mc.json"}}


PUT_DICT = {"pair": {"numeraire": "DAI", "asset": "ETH"},
            "legs": [{"strike": 2000.0, "is_put": True, "is_long": False}]}


def _write(tmp_path, config, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config) if not isinstance(config, str) else config)
    return path


def _run(kind, cfg, *extra):
    return cli.main([kind, "--config", str(cfg), *extra])


def test_margin_cboe_scenario(tmp_path, capsys):
    out = tmp_path / "m.json"
    assert _run("margin", SCENARIOS / "margin_cboe.json", "--out", str(out)) == 0
    report = json.loads(out.read_text())
    assert report["requirement"] == 1050.0
    assert str(out) in capsys.readouterr().out


def test_premium_mc_week_mean_within_five_percent(tmp_path):
    out = tmp_path / "mc.json"
    assert _run("premium_mc", SCENARIOS / "premium_mc.json", "--out", str(out)) == 0
    stats = json.loads(out.read_text())
    assert stats["n_paths"] == 10_000 and stats["steps"] == 7 * 1440
    assert abs(stats["mean"] / stats["bs_price"] - 1) < 0.05
    rows = list(csv.reader(out.with_suffix(".csv").open()))
    assert rows[0] == ["path", "premium"] and len(rows) == 10_001


def test_same_seed_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, SMALL_MC)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _run("premium_mc", cfg, "--out", str(a)) == 0
    assert _run("premium_mc", cfg, "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".csv").read_bytes() == b.with_suffix(".csv").read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfg = _write(tmp_path, SMALL_MC)
    other = _write(tmp_path, {**SMALL_MC, "seed": 9}, "other.json")
    a, b, c = (tmp_path / f"{n}.json" for n in "abc")
    _run("premium_mc", cfg, "--seed", "9", "--out", str(a))
    _run("premium_mc", other, "--out", str(b))
    _run("premium_mc", cfg, "--out", str(c))
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()
    assert json.loads(a.read_text())["seed"] == 9


def test_output_path_is_relative_to_cwd_or_absolute(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = _write(tmp_path, {**SMALL_MC, "output": {"path": "nested/dir/mc.json"}})
    assert _run("premium_mc", cfg) == 0
    assert (tmp_path / "nested/dir/mc.json").exists()
    assert (tmp_path / "nested/dir/mc.csv").exists()


def test_calibrated_strike_mode(tmp_path):
    cfg = {**SMALL_MC, "params": {**SMALL_MC["params"], "horizon_days": 7, "dt_minutes": 60}}
    del cfg["params"]["strike"]
    cfg["params"]["zero_fraction_target"] = 0.33
    assert _run("premium_mc", _write(tmp_path, cfg), "--out", str(tmp_path / "c.json")) == 0
    assert json.loads((tmp_path / "c.json").read_text())["strike"] > 100.0


def test_payoff_csv_and_json(tmp_path):
    out = tmp_path / "p.csv"
    assert _run("payoff", SCENARIOS / "payoff_iron_condor.json", "--out", str(out)) == 0
    lines = out.read_text().split("\n")
    assert lines[0] == "price,profit" and lines[-1] == ""
    assert len(lines) == 203
    assert "\r" not in out.read_text()
    cfg = {"kind": "payoff", "params": {"position": PUT_DICT, "entry_spot": 2100.0,
                                        "grid": {"prices": [1500.0, 2500.0]}},
           "output": {"path": "x.json", "format": "json"}}
    assert _run("payoff", _write(tmp_path, cfg), "--out", str(tmp_path / "x.json")) == 0
    curve = json.loads((tmp_path / "x.json").read_text())["curve"]
    assert curve[0][0] == 1500.0 and curve[1] == [2500.0, 0.0]


def test_csv_floats_round_trip(tmp_path):
    out = tmp_path / "p.csv"
    _run("payoff", SCENARIOS / "payoff_iron_condor.json", "--out", str(out))
    for row in list(csv.reader(out.open()))[1:]:
        for cell in row:
            assert repr(float(cell)) == cell


def test_pool_replay_scenario(tmp_path):
    out = tmp_path / "snap.json"
    assert _run("pool_replay", SCENARIOS / "pool_replay.json", "--out", str(out)) == 0
    snap = json.loads(out.read_text())
    assert snap["aggregates"]["total_notional_value"] == 0.0
    rows = list(csv.DictReader(out.with_suffix(".csv").open()))
    assert [r["op"] for r in rows][:2] == ["deposit", "deposit"]
    assert any(r["utilization"] not in ("", "0.0") for r in rows)


def test_iv_and_dte(tmp_path):
    assert _run("iv", SCENARIOS / "iv.json", "--out", str(tmp_path / "iv.json")) == 0
    iv = json.loads((tmp_path / "iv.json").read_text())["implied_vol"]
    assert iv == pricing.implied_vol(0.003, 5e6, 2e8)
    assert _run("dte", SCENARIOS / "dte.json", "--out", str(tmp_path / "d.json")) == 0
    days = json.loads((tmp_path / "d.json").read_text())["effective_dte_days"]
    assert days == pricing.effective_dte(1.1, 1.0) * 365
    cfg = {"kind": "dte", "params": {"sigma": 1.0, "dte_days": days}}
    assert _run("dte", _write(tmp_path, cfg), "--out", str(tmp_path / "r.json")) == 0
    assert json.loads((tmp_path / "r.json").read_text())["range_factor"] == pytest.approx(1.1, rel=1e-12)


@pytest.mark.parametrize("mutate,field", [
    (lambda c: c["params"].update(sigma="high"), "params.sigma"),
    (lambda c: c["params"].update(bogus=1), "params.bogus"),
    (lambda c: c["params"].pop("n_paths"), "params.n_paths"),
    (lambda c: c["params"].update(estimator="exact"), "params.estimator"),
    (lambda c: c["params"].update(n_paths=0), "params.n_paths"),
    (lambda c: c.update(seed=-1), "seed"),
    (lambda c: c["output"].update(format="xml"), "output.format"),
    (lambda c: c.update(kind="margin"), "kind"),
])
def test_config_errors_name_the_field(tmp_path, capsys, mutate, field):
    cfg = json.loads(json.dumps(SMALL_MC))
    mutate(cfg)
    assert _run("premium_mc", _write(tmp_path, cfg)) == 1
    assert f"{field}:" in capsys.readouterr().err


def test_config_validated_before_any_output(tmp_path):
    cfg = json.loads(json.dumps(SMALL_MC))
    cfg["params"]["bogus"] = 1
    with pytest.raises(ConfigError):
        cli.run_scenario("premium_mc", cfg, out=tmp_path / "mc.json")
    assert not (tmp_path / "mc.json").exists()


def test_usage_and_json_errors_exit_1(tmp_path, capsys):
    assert _run("premium_mc", _write(tmp_path, "{not json")) == 1
    cfg = {"kind": "payoff", "params": {"position": {"legs": [{"strike": 2000.0}]}, "entry_spot": 2100.0,
                                        "grid": {"prices": [1500.0]}},
           "output": {"path": str(tmp_path / "y.csv")}}
    assert _run("payoff", _write(tmp_path, cfg)) == 1
    assert "params.position:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["nonsense", "--config", "x"])
    assert exc.value.code == 1


def test_domain_error_exits_2(tmp_path, capsys):
    cfg = {"kind": "dte", "params": {"sigma": 1.0, "dte_days": 1e6}}
    assert _run("dte", _write(tmp_path, cfg), "--out", str(tmp_path / "d.json")) == 2
    assert "DomainError" in capsys.readouterr().err
    log = tmp_path / "bad.jsonl"
    log.write_text('{"op": "withdraw", "account": "ghost", "shares": 1.0}\n')
    cfg = {"kind": "pool_replay", "params": {"event_log": "bad.jsonl"}}
    assert _run("pool_replay", _write(tmp_path, cfg), "--out", str(tmp_path / "s.json")) == 2


def test_io_errors_exit_3(tmp_path):
    assert _run("margin", tmp_path / "missing.json") == 3
    cfg = {"kind": "pool_replay", "params": {"event_log": "missing.jsonl"}}
    assert _run("pool_replay", _write(tmp_path, cfg), "--out", str(tmp_path / "s.json")) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert _run("margin", SCENARIOS / "margin_cboe.json", "--out", str(blocker / "m.json")) == 3


def test_console_script_is_installed(tmp_path):
    exe = shutil.which("panopt")
    cmd = [exe] if exe else [sys.executable, "-m", "panopt.cli"]
    res = subprocess.run([*cmd, "margin", "--config", str(SCENARIOS / "margin_cboe.json"), "--out",
                          str(tmp_path / "m.json")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert json.loads((tmp_path / "m.json").read_text())["requirement"] == 1050.0
