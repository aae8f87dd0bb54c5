import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphcl.config import RunConfig
from graphcl.errors import ConfigError


def test_defaults():
    t = RunConfig().train
    assert (t.alpha, t.kappa, t.tau, t.zero_ratio, t.lambda_ema, t.c_max) == (0.5, 0.01, 2.0, 2 / 3, 0.99, 8)
    assert (t.iters_pretrain, t.iters_selftrain) == (300, 600)


def test_round_trip_is_identity():
    run = RunConfig.from_dict({"train": {"seed": 3, "sa_enabled": False}, "phantom": {"shape": [1, 32, 32]}})
    again = RunConfig.loads(run.dumps())
    assert again == run and again.dumps() == run.dumps()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.floats(0, 1), iters=st.integers(0, 1000), cc=st.booleans())
def test_round_trip_property(seed, alpha, iters, cc):
    run = RunConfig.from_dict({"train": {"seed": seed, "alpha": alpha, "iters_selftrain": iters, "cc_enabled": cc}})
    assert RunConfig.loads(run.dumps()) == run


@pytest.mark.parametrize("raw,needle", [
    ({"trian": {}}, "trian"),
    ({"train": {"alpah": 0.5}}, "alpah"),
    ({"phantom": {"noise": 1}}, "noise"),
    ({"holdout": -1}, "holdout"),
    ({"eval": {"net": "coach"}}, "net"),
])
def test_unknown_and_invalid_keys(raw, needle):
    with pytest.raises(ConfigError, match=needle):
        RunConfig.from_dict(raw)


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(str(p))
    with pytest.raises(ConfigError):
        RunConfig.load(str(tmp_path / "missing.json"))


def test_dump_is_plain_json():
    assert json.loads(RunConfig().dumps())["train"]["tau"] == 2.0
