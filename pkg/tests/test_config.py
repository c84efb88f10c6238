import pytest

from derainkit.config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    config_text,
    load_config,
    parse_config,
    with_seed,
)


def test_defaults_parse_empty():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.rl.t_max == 15
    assert cfg.rl.episodes == 100
    assert cfg.rl.max_episode == 150
    assert cfg.rl.lambda_brisque == 0.025
    assert cfg.mask.patch_size == 9


def test_parse_values_and_comments():
    text = """
    # mask settings
    mask.patch_size = 7
    rl.gamma=0.9   # discount
    seed=42
    scorer.path=/tmp/model.txt
    synth.count=10
    """
    cfg = parse_config(text)
    assert cfg.mask.patch_size == 7
    assert cfg.rl.gamma == 0.9
    assert cfg.seed == 42
    assert cfg.mask.seed == 42 and cfg.rl.seed == 42 and cfg.synth.seed == 42
    assert cfg.scorer_path == "/tmp/model.txt"
    assert cfg.synth.count == 10


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("mask.patchsize=7")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("turbo=1")


def test_bad_value_type_rejected():
    with pytest.raises(ConfigError, match="expected int"):
        parse_config("mask.patch_size=seven")


def test_invariants_checked_at_parse_time():
    with pytest.raises(ConfigError):
        parse_config("rl.gamma=1.5")
    with pytest.raises(ConfigError):
        parse_config("mask.patch_size=8")
    with pytest.raises(ConfigError):
        parse_config("synth.intensity=0")


def test_round_trip_echo():
    cfg = parse_config("rl.episodes=7\nmask.lambda_d=0.2\nseed=9\nsynth.width=2")
    text = config_text(cfg)
    again = parse_config(text)
    assert again == cfg
    # defaults are echoed too
    assert "rl.t_max=15" in text
    assert "seed=9" in text


def test_overrides_and_seed():
    cfg = parse_config("rl.episodes=7")
    cfg = apply_overrides(cfg, ["rl.episodes=9", "mask.stride=3"])
    assert cfg.rl.episodes == 9
    assert cfg.mask.stride == 3
    cfg = with_seed(cfg, 123)
    assert cfg.seed == 123 and cfg.rl.seed == 123
    assert cfg.rl.episodes == 9  # overrides survive reseeding
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["rl.episodes"])


def test_load_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed=5\nrl.t_max=4\n")
    cfg = load_config(path)
    assert cfg.seed == 5 and cfg.rl.t_max == 4


def test_malformed_line():
    with pytest.raises(ConfigError, match="key=value"):
        parse_config("justakey\n")
