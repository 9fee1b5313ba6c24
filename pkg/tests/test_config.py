import pytest

from rvoslite.config import ConfigError, RunConfig, build_config, parse_config_file


def test_defaults():
    cfg = RunConfig()
    assert cfg.sampling_method == "global"
    assert cfg.sampling_num_frames == 5
    assert cfg.train_accum == 2
    assert cfg.train_batch == 1
    assert cfg.instance_k_max == 8
    assert cfg.refiner == "none"


def test_file_overrides_defaults(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("""
# comment line
sampling.method = local
train.steps = 42        # trailing comment
instance_init.enabled = false
train.lr = 0.01
""")
    cfg = build_config(f)
    assert cfg.sampling_method == "local"
    assert cfg.train_steps == 42
    assert cfg.instance_enabled is False
    assert cfg.train_lr == 0.01
    assert cfg.sampling_num_frames == 5  # untouched default


def test_flags_override_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("train.steps = 42\nsampling.method = local\n")
    cfg = build_config(f, {"train_steps": 7, "sampling_seed": 99})
    assert cfg.train_steps == 7       # flag beats file
    assert cfg.sampling_method == "local"  # file beats default
    assert cfg.sampling_seed == 99    # flag beats default


def test_none_flags_do_not_override(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("train.steps = 42\n")
    cfg = build_config(f, {"train_steps": None})
    assert cfg.train_steps == 42


def test_unknown_key_rejected(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("sampling.bogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        parse_config_file(f)


def test_bad_value_rejected(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("train.steps = many\n")
    with pytest.raises(ConfigError, match="many"):
        parse_config_file(f)


def test_bad_bool_rejected(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("instance_init.enabled = maybe\n")
    with pytest.raises(ConfigError):
        parse_config_file(f)


def test_missing_equals_rejected(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("just some words\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_file(f)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config_file(tmp_path / "ghost.cfg")


def test_model_dims_from_config():
    cfg = RunConfig(model_channels=8, model_heads=2, model_queries=3)
    dims = cfg.model_dims()
    assert dims.channels == 8
    assert dims.num_queries == 3
    assert dims.level_channels == (8, 8, 8)


def test_tolerance_sentinel():
    assert RunConfig().tolerance_or_none() is None
    assert RunConfig(eval_tolerance=2.0).tolerance_or_none() == 2.0
