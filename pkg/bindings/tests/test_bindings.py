import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import tokreduce
import tokreduce_bindings as tb
from tokreduce.errors import ConfigError, ShapeError, TensorFormatError

GOLDEN = Path(__file__).parents[2] / "tests" / "golden"

GOLDEN_CONFIG = json.loads((GOLDEN / "config_seed42.json").read_text())


def golden_embeddings():
    # the same seeded workload the CLI golden run generates internally
    wl = tokreduce.gen_workload(
        n_visual=64, m_text=0, width=16, num_layers=16, seed=42, grid=(8, 8)
    )
    return wl.embeddings


def test_version_matches_engine():
    assert tb.__version__ == tokreduce.__version__


def test_zero_schedule_returns_input_values():
    emb = golden_embeddings()
    config = dict(GOLDEN_CONFIG, keep_budget=64)
    reduced, trace, summary = tb.bound_run(emb, synth={"seed": 42}, config=config)
    assert reduced.dtype == np.float32
    np.testing.assert_array_equal(reduced, emb)
    assert summary["final"]["visual"] == 64
    assert all(rec["discarded"] == [] for rec in trace)


def test_golden_parity_with_cli(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "tokreduce.cli", "reduce",
         "--config", str(GOLDEN / "config_seed42.json"),
         "--synth", "--synth-width", "16", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert res.returncode == 0, res.stderr
    cli_trace = json.loads((tmp_path / "trace.json").read_text())
    cli_reduced = np.load(tmp_path / "embeddings.npy")

    reduced, trace, summary = tb.bound_run(
        golden_embeddings(), synth={"seed": 42}, config=GOLDEN_CONFIG
    )

    assert len(trace) == len(cli_trace)
    for ours, theirs in zip(trace, cli_trace):
        assert ours["layer"] == theirs["layer"]
        assert ours["discarded"] == theirs["discarded"]
        assert ours["scores"]["tokens"] == theirs["scores"]["tokens"]
        np.testing.assert_allclose(
            ours["scores"]["values"], theirs["scores"]["values"], atol=1e-9
        )
        assert len(ours["assignments"]) == len(theirs["assignments"])
        for a, b in zip(ours["assignments"], theirs["assignments"]):
            assert a["source"] == b["source"]
            assert a["targets"] == b["targets"]
            np.testing.assert_allclose(a["weights"], b["weights"], atol=1e-9)
        got_mass = {r["target"]: r["mass"] for r in ours["received_mass"]}
        want_mass = {r["target"]: r["mass"] for r in theirs["received_mass"]}
        assert got_mass.keys() == want_mass.keys()
        for t in got_mass:
            assert abs(got_mass[t] - want_mass[t]) <= 1e-9
    np.testing.assert_array_equal(reduced, cli_reduced)  # bitwise via float32
    # the serialized form is byte-identical too
    assert json.dumps(trace, indent=2) + "\n" == (GOLDEN / "trace_seed42.json").read_text()


def test_raw_bytes_buffer_accepted():
    emb = golden_embeddings()
    reduced_a, _, _ = tb.bound_run(
        emb.tobytes(), shape=emb.shape, synth={"seed": 42}, config=GOLDEN_CONFIG
    )
    reduced_b, _, _ = tb.bound_run(emb, synth={"seed": 42}, config=GOLDEN_CONFIG)
    np.testing.assert_array_equal(reduced_a, reduced_b)


def test_float64_rejected_no_silent_cast():
    emb = golden_embeddings().astype(np.float64)
    with pytest.raises(TensorFormatError, match="float32"):
        tb.bound_run(emb, synth={"seed": 42}, config=GOLDEN_CONFIG)
    with pytest.raises(TensorFormatError, match="format"):
        tb.bound_run(
            memoryview(emb), shape=emb.shape, synth={"seed": 42}, config=GOLDEN_CONFIG
        )


def test_shape_mismatch_rejected():
    emb = golden_embeddings()
    with pytest.raises(ShapeError):
        tb.bound_run(
            emb.tobytes(), shape=(63, 16), synth={"seed": 42}, config=GOLDEN_CONFIG
        )
    with pytest.raises(ShapeError):
        tb.bound_run(emb, shape=(64, 16), synth={"seed": 42}, config=GOLDEN_CONFIG)


def test_config_validation_delegated():
    emb = golden_embeddings()
    with pytest.raises(ConfigError, match="unknown"):
        tb.bound_run(emb, synth={"seed": 42}, config=dict(GOLDEN_CONFIG, typo_key=1))


def test_exactly_one_workload_source():
    emb = golden_embeddings()
    with pytest.raises(ConfigError):
        tb.bound_run(emb, config=GOLDEN_CONFIG)
    with pytest.raises(ConfigError):
        tb.bound_run(emb, synth={"seed": 1}, attention=[], config=GOLDEN_CONFIG)


def test_attention_mode_runs():
    rng = np.random.default_rng(3)
    emb = rng.standard_normal((5, 8)).astype(np.float32)

    def stochastic(n):
        raw = rng.random((n, n)) + 1e-3
        return (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)

    layer0, layer1 = stochastic(5), stochastic(4)
    config = {
        "variant": "V", "grid_rows": 2, "grid_cols": 2, "num_layers": 2,
        "keep_budget": 3, "start_layer": 0,
    }
    reduced, trace, summary = tb.bound_run(
        emb,
        attention=[layer0.tobytes(), layer1.tobytes()],
        attention_shapes=[(5, 5), (4, 4)],
        config=config,
    )
    assert summary["final"]["visual"] == 3
    assert reduced.shape == (4, 8)


def test_attention_mode_shape_drift_is_engine_error():
    rng = np.random.default_rng(5)
    emb = rng.standard_normal((5, 8)).astype(np.float32)
    raw = rng.random((2, 5, 5)) + 1e-3
    attn = (raw / raw.sum(axis=2, keepdims=True)).astype(np.float32)
    config = {
        "variant": "V", "grid_rows": 2, "grid_cols": 2, "num_layers": 2,
        "keep_budget": 3, "start_layer": 0,
    }
    with pytest.raises(ShapeError, match="alive"):
        tb.bound_run(
            emb,
            attention=[attn[0], attn[1]],  # layer 1 still 5x5 after a discard
            config=config,
        )


def test_plan_schedule_native():
    assert tb.plan_schedule(576, keep_budget=64, start_layer=12, num_layers=24) == \
        [0] * 12 + [43] * 8 + [42] * 4
    assert tb.plan_schedule(8, explicit=[0, 4, 4], start_layer=1, num_layers=3) == [0, 4, 4]


def test_pipeline_cost_native():
    report = tb.pipeline_cost(
        [512] + [0] * 31, n_visual=576, m_text=60, d=4096, h_ffn=11008, variant="L"
    )
    assert 80.0 <= report["percent_reduction"] <= 82.0
    assert report["closed_form_warnings"]


def test_no_numeric_work_in_binding():
    # the binding delegates: engine functions produce the exact same mappings
    sched = tb.plan_schedule(16, keep_budget=4, start_layer=0, num_layers=4)
    engine = tokreduce.plan_schedule(16, keep_budget=4, start_layer=0, num_layers=4)
    assert sched == list(engine.per_layer)
    ours = tb.pipeline_cost(sched, n_visual=16, m_text=0, d=8, h_ffn=32, variant="V")
    theirs = tokreduce.pipeline_cost(sched, n_visual=16, m_text=0, d=8, h_ffn=32, variant="V")
    assert ours == theirs.to_json_dict()
