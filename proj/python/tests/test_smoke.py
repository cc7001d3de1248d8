# Copyright 2026 The hierform Authors
# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest

import hierform


def test_default_plan():
    p = hierform.plan(326, hop_ms=20.0)
    assert p["window"] == [3, 7, 7]
    assert p["merge"] == [3, 5, 4]
    assert p["length"] == [326, 109, 22, 6]
    assert p["word_tokens"] == 7
    assert hierform.plan(326, mismatch=2.0)["window"][0] == 5


def test_closed_form_costs():
    t, d, tz, tw = 326, 1024, 7, 3
    assert hierform.msa_flops(t, d) == 4 * t * d * d + 2 * t * t * d
    assert hierform.smsa_flops(t, tz, tw, d) == 4 * (t + tz) * d * d + 2 * t * (tw + 2) * d


def test_flops_gain_band():
    r = hierform.flops(326)
    assert -77.0 <= r["gain_percent"] <= -66.0
    assert r["hierarchical"] < r["baseline"]
    assert hierform.flops(426)["gain_percent"] < hierform.flops(224)["gain_percent"]


def test_metrics_and_vote():
    m = hierform.metrics([[2, 1], [0, 1]])
    assert m["WA"] == pytest.approx(0.75)
    assert m["UA"] == pytest.approx(0.8333, abs=1e-4)
    assert m["WF1"] == pytest.approx(0.7667, abs=1e-4)
    assert m["MF1"] == pytest.approx(0.7333, abs=1e-4)
    assert hierform.majority_vote([1, 1, 0]) == 1
    assert hierform.majority_vote([0, 1]) == 0
    with pytest.raises(ValueError):
        hierform.majority_vote([])


def test_schedule_and_loss():
    assert hierform.cosine_lr(0, 10, 0.1) == pytest.approx(0.1)
    assert hierform.cosine_lr(10, 10, 0.1) == pytest.approx(0.001)
    assert hierform.cce(np.array([[0.25] * 4]), np.array([[0, 0, 1, 0]])) == pytest.approx(2.0)


def test_feature_round_trip(tmp_path):
    values = np.arange(12, dtype=np.float32).reshape(4, 3) / 8.0
    for name in ("x.hfm", "x.csv"):
        path = tmp_path / name
        hierform.save_features(path, values, hop_ms=10.0, label=1)
        back, hop, label = hierform.load_features(path)
        assert np.array_equal(back, values)
        assert hop == 10.0
        assert label == 1
    (tmp_path / "bad.hfm").write_bytes(b"HFM1\x01")
    with pytest.raises(hierform.HierformError, match="truncated"):
        hierform.load_features(tmp_path / "bad.hfm")


def test_model_predict_and_weights(tmp_path):
    model = hierform.Model("hierarchical", frames=12, input_width=8, preset="tiny")
    x = np.random.default_rng(0).uniform(-1, 1, size=(12, 8))
    a = model.predict(x)
    b = model.predict(x)
    assert a["logits"].shape == (2,)
    assert np.array_equal(a["logits"], b["logits"])
    assert a["label"] == int(np.argmax(a["logits"]))

    rec = model.predict(x, valid=[True] * 11 + [False], record_attention=True)
    assert sum(rec["profile"]) == pytest.approx(1.0)
    assert rec["profile"][11] < min(rec["profile"][:11])

    counts = model.param_count()
    assert counts["total"] == counts["structural"] + counts["word_tokens"]

    model.save(tmp_path / "w.bin")
    other = hierform.Model("hierarchical", frames=12, input_width=8, preset="tiny", overrides=["seed=5"])
    assert not np.array_equal(other.predict(x)["logits"], a["logits"])
    other.load(tmp_path / "w.bin")
    assert np.array_equal(other.predict(x)["logits"], a["logits"])

    name = "classifier.output.bias"
    assert name in model.parameter_names()
    model.set(name, np.array([[-50.0, 50.0]]))
    assert np.array_equal(model.get(name), [[-50.0, 50.0]])
    assert model.predict(x)["label"] == 1
    with pytest.raises(ValueError):
        model.set(name, np.zeros((2, 2)))


def test_parameter_overhead_at_full_width():
    base = hierform.Model("baseline", frames=326, preset="default").param_count()
    sf = hierform.Model("hierarchical", frames=326, preset="default").param_count()
    assert sf["structural"] - base["structural"] == 3 * (1024**2 + 5 * 1024)


def test_gradcheck_tiny():
    rows = hierform.gradcheck("tiny")
    assert len(rows) == 8
    assert all(r["passed"] and r["max_rel_error"] < 1e-4 for r in rows)


def test_cli_entry():
    code, out, err = hierform.run_cli(["plan", "-T", "326"])
    assert code == 0
    assert "t_w=(3,7,7)" in out
    code, _, err = hierform.run_cli(["plan", "--bogus"])
    assert code == 2
    assert err
