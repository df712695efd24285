import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vwapx.config import RunConfig
from vwapx.synth import GeneratorConfig
from vwapx.trainer import TrainConfig


def test_defaults_follow_training_table():
    cfg = RunConfig()
    assert cfg.train_config() == TrainConfig(mode="tul", seed=0)
    t = cfg.train_config()
    assert (t.outer_iterations, t.inner_epochs, t.minibatch, t.clip_eps, t.gamma) == \
        (10_000, 10, 10, 0.2, 1.0)
    assert (t.c1, t.c2, t.c3, t.c4) == (0.5, 0.5, 1.0, 0.01)
    assert cfg.generator == GeneratorConfig()


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["tul", "hul", "hu-ppo", "ppo", "naive"]), st.integers(0, 2**31),
       st.integers(1, 500), st.floats(0.01, 0.5), st.floats(0.0, 0.5), st.booleans())
def test_round_trip_is_idempotent(mode, seed, iters, eps, noise, greedy):
    cfg = RunConfig(mode=mode, seed=seed, greedy=greedy,
                    generator={"noise_scale": noise},
                    train={"outer_iterations": iters, "clip_eps": eps})
    once = cfg.to_json()
    again = RunConfig.from_dict(json.loads(once))
    assert again == cfg
    assert again.to_json() == once


def test_unknown_keys_rejected():
    for bad in ({"epochs": 3}, {"train": {"epochs": 3}}, {"generator": {"colour": 1}},
                {"train": {"mode": "hul"}}, {"train": {"seed": 1}}, {"mode": "dqn"}):
        with pytest.raises(ValueError):
            RunConfig.from_dict(bad)


def test_load_and_flag_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"mode": "hul", "seed": 3, "train": {"outer_iterations": 7}}))
    cfg = RunConfig.load(p)
    assert (cfg.mode, cfg.seed, cfg.train["outer_iterations"]) == ("hul", 3, 7)
    over = cfg.override(seed=9, mode=None, out="elsewhere")
    assert (over.mode, over.seed, over.out) == ("hul", 9, "elsewhere")
    assert over.train_config().seed == 9
    p.write_text("{not json")
    with pytest.raises(ValueError):
        RunConfig.load(p)
    p.write_text("[1, 2]")
    with pytest.raises(ValueError):
        RunConfig.load(p)


def test_invalid_values_rejected():
    with pytest.raises(ValueError):
        RunConfig(train={"inner_epochs": 0})
    with pytest.raises(ValueError):
        RunConfig(bin_width_bps=0)
    with pytest.raises(ValueError):
        RunConfig(generator={"noise_persistence": 1.0})
