import math

import pytest

from fedecho.config import build_config, parse_raw, set_override
from fedecho.errors import ConfigError

MINIMAL = """
[federation]
clients = 8
concurrency = 4
buffer = 2
rounds = 10
"""


def test_minimal_config_builds_with_defaults():
    cfg = build_config(parse_raw(MINIMAL))
    assert cfg.n_clients == 8
    assert cfg.dataset.n_unlabeled == 2000
    assert cfg.algo.algorithm == "fedecho"
    assert cfg.algo.distill.nu == 5.0
    assert cfg.algo.distill.alpha_min == 0.2
    assert cfg.algo.distill.alpha_max == 0.8
    assert cfg.algo.distill.beta1 == 0.9
    assert cfg.algo.distill.beta2 == 0.999
    assert cfg.algo.distill.eps == 1e-8
    assert cfg.delay.long == (50.0, 80.0)
    assert cfg.seeds == (0,)


def test_unknown_section_and_key_rejected():
    with pytest.raises(ConfigError, match="unknown config section"):
        build_config(parse_raw("[nonsense]\nx = 1\n"))
    with pytest.raises(ConfigError, match="unknown config key"):
        build_config(parse_raw("[federation]\nwidth = 2\n"))


def test_fixed_alpha_pins_both_endpoints():
    cfg = build_config(parse_raw(MINIMAL + "[distill]\nalpha = 0.5\n"))
    assert cfg.algo.distill.alpha_min == 0.5
    assert cfg.algo.distill.alpha_max == 0.5


def test_dynamic_alpha_keeps_band():
    text = MINIMAL + "[distill]\nalpha = dynamic\nalpha_min = 0.1\nalpha_max = 0.9\n"
    cfg = build_config(parse_raw(text))
    assert cfg.algo.distill.alpha_min == 0.1
    assert cfg.algo.distill.alpha_max == 0.9


def test_infinite_clip_threshold():
    cfg = build_config(parse_raw(MINIMAL + "[distill]\nnu = inf\n"))
    assert math.isinf(cfg.algo.distill.nu)


def test_seed_list_parses():
    cfg = build_config(parse_raw(MINIMAL + "[run]\nseeds = 1, 2, 3\n"))
    assert cfg.seeds == (1, 2, 3)


def test_buffer_larger_than_concurrency_rejected():
    bad = MINIMAL.replace("buffer = 2", "buffer = 5")
    with pytest.raises(ConfigError, match="buffer"):
        build_config(parse_raw(bad))


def test_epochs_and_steps_are_exclusive():
    with pytest.raises(ConfigError, match="epochs or steps"):
        build_config(parse_raw(MINIMAL + "[local]\nepochs = 2\nsteps = 5\n"))


def test_steps_mode_builds():
    cfg = build_config(parse_raw(MINIMAL + "[local]\nsteps = 7\n"))
    assert cfg.algo.local_steps == 7
    assert cfg.algo.local_epochs is None


def test_mild_profile_long_range():
    cfg = build_config(parse_raw(MINIMAL + "[delay]\nprofile = mild\n"))
    assert cfg.delay.long == (10.0, 20.0)


def test_custom_profile_requires_ranges():
    with pytest.raises(ConfigError, match="delay"):
        build_config(parse_raw(MINIMAL + "[delay]\nprofile = custom\n"))
    text = MINIMAL + "[delay]\nprofile = custom\nshort = 1,1\nmedium = 2,2\nlong = 3,3\n"
    cfg = build_config(parse_raw(text))
    assert cfg.delay.long == (3.0, 3.0)


def test_bad_values_carry_field_names():
    with pytest.raises(ConfigError, match="federation.rounds"):
        build_config(parse_raw(MINIMAL.replace("rounds = 10", "rounds = soon")))
    with pytest.raises(ConfigError, match="distill.nu"):
        build_config(parse_raw(MINIMAL + "[distill]\nnu = big\n"))


def test_override_validates_keys():
    raw = parse_raw(MINIMAL)
    out = set_override(raw, "distill.nu", "1")
    assert out["distill"]["nu"] == "1"
    assert "distill" not in raw  # original untouched
    with pytest.raises(ConfigError, match="unknown config key"):
        set_override(raw, "distill.temperature", "2")
    with pytest.raises(ConfigError, match="section.key"):
        set_override(raw, "nu", "2")
