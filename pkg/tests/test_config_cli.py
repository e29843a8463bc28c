from __future__ import annotations

import io
import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adp2sgd import analysis, cli, config, topology
from adp2sgd.config import parse_config, parse_config_dict
from adp2sgd.errors import ConfigError, TraceSchemaError
from adp2sgd.traceio import read_trace
import oracles as o

DEMO_CONFIGS = sorted((Path(__file__).parent.parent / "demos" / "configs").glob("*.json"))


def minimal(**over):
    raw = {
        "schema_version": 1,
        "task": {"kind": "quadratic", "dim": 3, "n_workers": 4, "shard_sizes": 16},
        "eta": 0.05,
        "batch_size": 2,
        "iterations": 200,
    }
    raw.update(over)
    return raw


def calibrated(**over):
    raw = minimal(privacy={"calibrated": {"eps": 5.0, "delta": 0.01, "mu": 0.3}},
                  task={"kind": "quadratic", "dim": 3, "n_workers": 4, "shard_sizes": 32},
                  batch_size=4)
    raw.update(over)
    return raw


def write(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


def test_minimal_config_defaults():
    cfg = parse_config_dict(minimal())
    assert cfg.scenario.jitter == 0.0
    assert cfg.probe_stride == 100
    assert cfg.scenario.comm_time == pytest.approx(0.1 * cfg.scenario.base_compute_time)
    assert cfg.privacy.raw_sigma == 0.0 and cfg.mode == "adpsgd"
    assert cfg.engine.snapshot == "serialized"


def test_both_privacy_modes_rejected():
    raw = minimal(privacy={"raw_sigma": 1.0, "calibrated": {"eps": 1.0, "delta": 1e-5}})
    with pytest.raises(ConfigError) as info:
        parse_config_dict(raw)
    msg = str(info.value)
    assert "raw_sigma" in msg and "calibrated" in msg


def test_odd_ring_rejected():
    raw = minimal(task={"kind": "quadratic", "dim": 3, "n_workers": 5, "shard_sizes": 16})
    with pytest.raises(ConfigError, match="even number of workers"):
        parse_config_dict(raw)


def test_all_errors_collected():
    raw = minimal(bogus=1, batch_size=0)
    raw["task"]["kind"] = "cubic"
    with pytest.raises(ConfigError) as info:
        parse_config_dict(raw)
    assert len(info.value.errors) >= 3
    assert any("bogus" in e for e in info.value.errors)


def test_lr_source_exclusive():
    with pytest.raises(ConfigError, match="eta"):
        parse_config_dict(minimal(lr_rule="prop1"))
    raw = minimal(lr_rule="prop1")
    del raw["eta"]
    cfg = parse_config_dict(raw)
    assert config.learning_rate(cfg) == (4 / (2 * math.sqrt(200)), "prop1")


def test_mode_requires_matching_length():
    with pytest.raises(ConfigError, match="epochs"):
        parse_config_dict(minimal(mode="sync"))
    raw = minimal(mode="sync", epochs=5)
    del raw["iterations"]
    assert parse_config_dict(raw).total_updates == 20


def test_bad_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        parse_config(p)


@given(
    st.sampled_from(["quadratic", "logistic"]),
    st.integers(2, 6).map(lambda k: 2 * k),
    st.floats(0, 5),
    st.sampled_from(["none", "random_slow", "fixed_straggler"]),
    st.integers(0, 1000),
)
@settings(max_examples=30, deadline=None)
def test_round_trip(kind, K, sigma, scen, seed):
    raw = minimal(task={"kind": kind, "dim": 2, "n_workers": K, "shard_sizes": 8},
                  privacy={"raw_sigma": sigma}, scenario={"kind": scen, "factor": 2.0}, seed=seed)
    cfg = parse_config_dict(raw)
    again = parse_config_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.sha256() == cfg.sha256()


def test_calibrate_command_feasible():
    raw = minimal(privacy={"calibrated": {"eps": 5, "delta": 0.01, "mu": 0.5}},
                  task={"kind": "quadratic", "dim": 3, "n_workers": 16, "shard_sizes": 3125},
                  batch_size=256, iterations=20000)
    out = io.StringIO()
    assert cli.cmd_calibrate(parse_config_dict(raw), out=out) == 0
    text = out.getvalue()
    assert "sigma2   0.000181892" in text
    assert text.count("✓") == 3


def test_calibrate_command_infeasible_and_auto():
    raw = minimal(privacy={"calibrated": {"eps": 2, "delta": 1e-5, "mu": 0.5}},
                  task={"kind": "quadratic", "dim": 3, "n_workers": 16, "shard_sizes": 3125},
                  batch_size=256, iterations=1000)
    out = io.StringIO()
    assert cli.cmd_calibrate(parse_config_dict(raw), out=out) == 1
    assert "✗ alpha log-ratio bound: 12.5129 <= 4.30379" in out.getvalue()
    raw["iterations"] = 20000
    raw["privacy"]["calibrated"]["eps"] = 5
    raw["privacy"]["calibrated"]["delta"] = 0.01
    out = io.StringIO()
    assert cli.cmd_calibrate(parse_config_dict(raw), mu="auto", out=out) == 0
    assert "mu       0." in out.getvalue()


def test_run_twice_byte_identical(tmp_path):
    cfg = parse_config_dict(calibrated(scenario={"kind": "random_slow", "factor": 2.0, "jitter": 0.1},
                                       probe_stride=10))
    a = cli.cmd_run(cfg, tmp_path / "a")
    b = cli.cmd_run(cfg, tmp_path / "b")
    assert a["trace"].read_bytes() == b["trace"].read_bytes()
    header, records = read_trace(a["trace"])
    assert header["config_sha256"] == cfg.sha256()
    assert a["config"].read_text().strip() == cfg.to_json()
    assert records[-1].eps_spent == pytest.approx(5.0, abs=1e-9)
    report = json.loads(a["report"].read_text())
    assert report["lr_rule"] == "fixed" and report["privacy"]["mu"] == 0.3
    assert not list(tmp_path.glob("a/.*.tmp"))


def test_compare_self_and_schema_mismatch(tmp_path):
    cfg = parse_config_dict(minimal(probe_stride=20))
    path = cli.cmd_run(cfg, tmp_path)["trace"]
    rows = cli.compare_traces(path, path)
    assert [r[3] for r in rows] == [1.0] * 4
    out = io.StringIO()
    cli.cmd_compare(path, path, out=out)
    assert out.getvalue().splitlines()[0] == "metric,a,b,ratio_b_over_a"
    bad = tmp_path / "bad.csv"
    bad.write_text(path.read_text().replace("# schema_version=1", "# schema_version=2"))
    with pytest.raises(TraceSchemaError, match="version 2"):
        cli.compare_traces(path, bad)


def test_main_exit_codes(tmp_path, capsys):
    good = write(tmp_path, minimal(probe_stride=50))
    assert cli.main(["run", "--config", str(good), "--seed", "3", "--output", str(tmp_path / "o")]) == 0
    header, _ = read_trace(tmp_path / "o" / "trace.csv")
    assert header["seed"] == "3"
    bad = write(tmp_path, minimal(task={"kind": "quadratic", "dim": 3, "n_workers": 5, "shard_sizes": 4}), "b.json")
    assert cli.main(["run", "--config", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err


def test_sweep_sequential(tmp_path):
    cfg = parse_config_dict(minimal(iterations=50, probe_stride=25))
    res = cli.cmd_sweep(cfg, [0, 1], jobs=1, output=tmp_path)
    assert [Path(r["trace"]).parent.name for r in res] == ["seed_0", "seed_1"]
    assert Path(res[0]["trace"]).read_bytes() != Path(res[1]["trace"]).read_bytes()


def test_sweep_parallel_matches_sequential(tmp_path):
    cfg = parse_config_dict(minimal(iterations=50, probe_stride=25))
    seq = cli.cmd_sweep(cfg, [0, 1], jobs=1, output=tmp_path / "s")
    par = cli.cmd_sweep(cfg, [0, 1], jobs=2, output=tmp_path / "p")
    for a, b in zip(seq, par):
        assert Path(a["trace"]).read_bytes() == Path(b["trace"]).read_bytes()


@pytest.mark.parametrize("path", DEMO_CONFIGS, ids=[p.stem for p in DEMO_CONFIGS])
def test_demo_configs_parse_and_flags_agree(path):
    cfg = parse_config(path)
    if cfg.privacy.calibrated is not None:
        params = config.build_privacy(cfg)
        assert params.feasible
    eta, _ = config.learning_rate(cfg)
    task = config.build_task(cfg)
    rho = topology.estimate_spectral_gap(config.build_graph(cfg)).rho
    c = analysis.theorem1_constants(eta, cfg.batch_size, task.lipschitz_grad, task.n_workers - 1, task.n_workers, rho)
    # independent term-by-term re-evaluation of the admissibility flags
    C1, C2, C3, _ = o.compute_theorem1(eta, cfg.batch_size, task.lipschitz_grad, task.n_workers - 1, task.n_workers, rho)
    assert (c.C1 > 0, c.C2 >= 0, c.C3 <= 1) == (C1 > 0, C2 >= 0, C3 <= 1)


def test_compare_case2_matches_renewal_prediction(tmp_path):
    configs = Path(__file__).parent.parent / "demos" / "configs"
    sync = cli.cmd_run(parse_config(configs / "case2_sync.json"), tmp_path / "s")["trace"]
    asyn = cli.cmd_run(parse_config(configs / "case2_adpsgd.json"), tmp_path / "a")["trace"]
    rows = {name: ratio for name, _, _, ratio in cli.compare_traces(sync, asyn)}
    # SYNC: 16 updates per 10 t_c + t_a; ADPSGD: 15 + 1/10 updates per t_c
    predicted = (15 + 0.1) / (16 / (10 + 0.1))
    assert abs(rows["updates_per_time"] / predicted - 1) <= 0.02
