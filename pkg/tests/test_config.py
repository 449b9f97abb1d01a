import pytest

from subspacecil.config import ConfigError, parse_config_file, resolve_config


def test_defaults_resolve():
    cfg = resolve_config()
    assert cfg["gfm.q"] == 0.9
    assert cfg["gfm.c"] == 0.6
    assert cfg["gfm.beta"] == 0.0005
    assert cfg["fmm.alpha1"] == 1.0
    assert cfg["fmm.alpha2"] == 0.5
    assert cfg["fmm.lambda1"] == 0.01
    assert cfg["fmm.lambda2"] == 0.1
    assert cfg["fmm.lambda3"] == 1.0
    assert cfg["fmm.xi"] == 0.2
    assert cfg["schedule.lr_gfm"] == 0.001
    assert cfg["schedule.lr_hlm"] == 0.01
    assert cfg["schedule.milestones"] == (4, 10)
    assert cfg["schedule.decay"] == 0.1
    assert cfg["replay.per_epoch"] == 2000


def test_profiles():
    imagenet = resolve_config(profile="imagenet-style")
    assert imagenet["schedule.epochs_per_task"] == 15
    assert imagenet["schedule.epoch_growth"] == 0
    cifar = resolve_config(profile="cifar-style")
    assert cifar["schedule.epochs_per_task"] == 25
    assert cifar["schedule.epoch_growth"] == 2
    with pytest.raises(ConfigError):
        resolve_config(profile="bogus")


def test_file_and_override_precedence(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        "# comment line\n"
        "gfm.q = 0.7\n"
        "data.d = 32  # trailing comment\n"
        "schedule.milestones = 2,5\n"
    )
    file_values = parse_config_file(str(path))
    cfg = resolve_config(file_values, overrides={"gfm.q": "0.8"})
    assert cfg["gfm.q"] == 0.8  # override beats file
    assert cfg["data.d"] == 32
    assert cfg["schedule.milestones"] == (2, 5)


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        resolve_config(overrides={"nope.key": "1"})
    path = tmp_path / "bad.cfg"
    path.write_text("mystery = 3\n")
    with pytest.raises(ConfigError):
        resolve_config(parse_config_file(str(path)))


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        resolve_config(overrides={"gfm.q": "1.5"})
    with pytest.raises(ConfigError):
        resolve_config(overrides={"gfm.c": "0.9"})
    with pytest.raises(ConfigError):
        resolve_config(overrides={"data.d": "abc"})
    with pytest.raises(ConfigError):
        resolve_config(overrides={"model.variant": "other"})
    with pytest.raises(ConfigError):
        resolve_config(overrides={"data.source": "file"})  # missing files


def test_bool_parsing():
    assert resolve_config(overrides={"gfm.fuse": "false"})["gfm.fuse"] is False
    assert resolve_config(overrides={"gfm.fuse": "1"})["gfm.fuse"] is True
    with pytest.raises(ConfigError):
        resolve_config(overrides={"gfm.fuse": "maybe"})


def test_echo_is_sorted_and_json_friendly():
    echo = resolve_config().echo()
    keys = list(echo)
    assert keys == sorted(keys)
    assert echo["schedule.milestones"] == [4, 10]
    assert all(not isinstance(v, tuple) for v in echo.values())


def test_config_file_syntax_error(tmp_path):
    path = tmp_path / "broken.cfg"
    path.write_text("just some words\n")
    with pytest.raises(ConfigError):
        parse_config_file(str(path))
