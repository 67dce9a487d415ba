import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metastab import cli, io
from metastab.config import RunConfig, SimulationSettings, load_config
from metastab.errors import UsageError
from metastab.potential import builtin_spec
from metastab.simulate import TraceJumpLog

GOLDEN = Path(__file__).parent / "golden"


def write_cfg(path, **kw):
    d = {"potential": "double_well"}
    d.update(kw)
    path.write_text(json.dumps(d))
    return path


def run(argv, capsys):
    rc = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


# -- config and serialization -------------------------------------------------

@settings(max_examples=40, deadline=None, derandomize=True)
@given(name=st.sampled_from(["double_well", "asym_double_well", "triple_well_1d", "triple_well_2d"]),
       H=st.one_of(st.just("auto"), st.floats(0.1, 5.0)),
       eps=st.lists(st.floats(1e-4, 0.9), min_size=1, max_size=4),
       runs=st.integers(1, 1000), seed=st.integers(0, 2**64 - 1))
def test_config_round_trip(name, H, eps, runs, seed):
    cfg = RunConfig(builtin_spec(name), H, False, tuple(eps), None,
                    SimulationSettings(epsilon=0.1, runs=runs, seed=seed))
    back = RunConfig.from_dict(json.loads(io.dumps(cfg.to_dict())))
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_config_rejects_bad_input(tmp_path):
    with pytest.raises(UsageError):
        RunConfig.from_dict({"potential": "double_well", "colour": 1})
    with pytest.raises(UsageError):
        RunConfig.from_dict({"potential": "nope"})
    with pytest.raises(UsageError):
        RunConfig.from_dict({"potential": "double_well", "eps_grid": [1.5]})
    with pytest.raises(UsageError):
        RunConfig.from_dict({"potential": "double_well", "simulation": {"runs": 0}})
    with pytest.raises(UsageError):
        load_config(tmp_path / "absent.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(UsageError):
        load_config(tmp_path / "bad.json")


def test_json_floats_round_trip():
    xs = [0.1, 1 / 3, math.pi, 1e-300, 5e-324, 2.0**60, -0.0]
    text = io.dumps({"x": xs, "n": math.nan, "i": math.inf})
    back = json.loads(text)
    assert back["x"] == xs
    assert back["n"] is None and back["i"] is None
    assert "0.10000000000000001" in text


def test_jumps_csv_round_trip(tmp_path):
    logs = [TraceJumpLog(np.array([1, 2, 1]), np.array([0.3, 1 / 3, 2.5]),
                         np.array([False, False, True]), 0.1, 3.0, 7.0, 1e-3, r, 0.3)
            for r in range(3)]
    io.write_jumps(tmp_path / "j.csv", logs)
    meta = {"theta": 7.0, "dt": 1e-3,
            "runs": [{"run": r, "delta_time": 0.1, "total_time": 3.0, "first_transition": 0.3}
                     for r in range(3)]}
    back = io.read_jumps(tmp_path / "j.csv", meta)
    for a, b in zip(logs, back):
        np.testing.assert_array_equal(a.valleys, b.valleys)
        np.testing.assert_array_equal(a.holdings, b.holdings)
        np.testing.assert_array_equal(a.censored, b.censored)
        assert (a.delta_time, a.total_time, a.run) == (b.delta_time, b.total_time, b.run)


# -- commands -----------------------------------------------------------------

def test_run_analyze_chains_matches_golden(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json")
    rc, _, _ = run(["run", "--config", cfg, "--out-dir", tmp_path, "--stages", "analyze,chains"],
                   capsys)
    assert rc == 0
    for name in ("landscape.json", "chains.json"):
        assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes()
    man = io.read_json(tmp_path / "manifest.json")
    assert set(man["stages"]) == {"analyze", "chains"}
    assert man["stages"]["chains"]["outputs"]["chains.json"] == io.digest(GOLDEN / "chains.json")
    assert man["config_hash"] == load_config(cfg).digest()


def test_chains_values():
    d = io.read_json(GOLDEN / "chains.json")
    assert d["beta"][0][1] == pytest.approx(1 / math.pi, rel=1e-14)
    assert d["nu"][0] == pytest.approx(1 / math.sqrt(8), rel=1e-14)


def test_verify_without_jumps(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json")
    run(["run", "--config", cfg, "--out-dir", tmp_path, "--stages", "analyze,chains"], capsys)
    rc, _, err = run(["run", "--config", cfg, "--out-dir", tmp_path, "--stages", "verify"], capsys)
    assert rc == 2
    e = json.loads(err.strip().splitlines()[-1])
    assert e["message"] == "missing artifact: jumps" and e["exit_code"] == 2
    assert e["stage"] == "verify"
    assert io.read_json(tmp_path / "error.json") == e


def test_single_deepest_well_exit_3(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", potential="asym_double_well")
    rc, _, err = run(["run", "--config", cfg, "--out-dir", tmp_path], capsys)
    assert rc == 3
    e = json.loads(err.strip().splitlines()[-1])
    assert "|S_star| < 2" in e["message"] and e["stage"] == "analyze"
    rc, _, _ = run(["run", "--config", cfg, "--out-dir", tmp_path / "b", "--allow-single",
                    "--stages", "analyze"], capsys)
    assert rc == 0


def test_report_empty_and_partial(tmp_path, capsys):
    rc, out, _ = run(["report", "--out-dir", tmp_path], capsys)
    assert rc == 0 and out.strip() == "nothing to report"
    cfg = write_cfg(tmp_path / "c.json")
    run(["run", "--config", cfg, "--out-dir", tmp_path, "--stages", "analyze,chains"], capsys)
    rc, out, _ = run(["report", "--out-dir", tmp_path], capsys)
    assert rc == 0 and "skipped" in out
    assert (tmp_path / "report.csv").exists()


def test_unknown_stage_and_config_missing(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json")
    rc, _, _ = run(["run", "--config", cfg, "--out-dir", tmp_path, "--stages", "bogus"], capsys)
    assert rc == 2
    rc, _, _ = run(["analyze", "--out-dir", tmp_path], capsys)
    assert rc == 2


def test_threads_env_fallback(monkeypatch):
    args = cli.build_parser().parse_args(["report"])
    monkeypatch.setenv("METASTAB_THREADS", "3")
    assert cli._threads(args) == 3
    args = cli.build_parser().parse_args(["report", "--threads", "2"])
    assert cli._threads(args) == 2
    monkeypatch.delenv("METASTAB_THREADS")
    assert cli._threads(cli.build_parser().parse_args(["report"])) == 1


def test_pipeline_reproducible(tmp_path, capsys, monkeypatch):
    cfg = write_cfg(tmp_path / "c.json", simulation={"epsilon": 0.3, "runs": 3, "horizon": 3,
                                                     "seed": 11})
    digests = []
    for k, threads in enumerate((1, 3)):
        od = tmp_path / f"o{k}"
        rc, out, _ = run(["run", "--config", cfg, "--out-dir", od, "--threads", threads], capsys)
        assert rc in (0, 1)
        man = io.read_json(od / "manifest.json")
        assert man["base_seed"] == 11 and man["rng_algorithm"]
        digests.append({s: v["outputs"] for s, v in man["stages"].items()})
    assert digests[0] == digests[1]
    assert "report.json" in digests[0]["verify"]
    rc, out, _ = run(["report", "--out-dir", tmp_path / "o0"], capsys)
    assert "holding" in out and "Laplace" in out
