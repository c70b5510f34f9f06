import pytest

from cpat.config import RunConfig, known_keys, read_config_file
from cpat.model import CPATConfig, ConfigError
from conftest import ROOT


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# layered settings\nchannels = 24   # from file\nws = 8\nseed = 5\nshift = no\n", encoding="utf-8")
    return path


def test_three_layers(cfg_file):
    run = RunConfig.build(read_config_file(cfg_file), {"ws": 4, "heads": None}, env={})
    assert run.channels == 24      # file over default
    assert run.ws == 4             # flag over file
    assert run.heads == CPATConfig().heads
    assert run.seed == 5 and run.shift is False


def test_env_seed_beats_flag(cfg_file):
    run = RunConfig.build(read_config_file(cfg_file), {"seed": 9}, env={"CPAT_SEED": "17"})
    assert run.seed == 17
    assert RunConfig.build({}, {"seed": 9}, env={}).seed == 9


def test_base_layer_sits_under_file(cfg_file):
    run = RunConfig.build(read_config_file(cfg_file), {}, env={}, base=RunConfig.toy_base())
    assert run.channels == 24 and run.groups == 1 and run.iters == 200


def test_unknown_key(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("chanels = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="chanels"):
        read_config_file(bad)
    with pytest.raises(ConfigError):
        RunConfig.build({"nope": 1}, env={})


@pytest.mark.parametrize("text,value", [("true", True), ("On", True), ("1", True), ("false", False), ("off", False)])
def test_bool_coercion(text, value):
    assert RunConfig.build({"sfim": text}, env={}).sfim is value


@pytest.mark.parametrize("key,text", [("sfim", "maybe"), ("channels", "twelve"), ("lr", "fast")])
def test_bad_values(key, text):
    with pytest.raises(ConfigError):
        RunConfig.build({key: text}, env={})


def test_shipped_configs_parse():
    for name in ("toy.cfg", "small.cfg"):
        run = RunConfig.build(read_config_file(ROOT / "configs" / name), env={})
        run.model_config()
        run.train_settings()
    toy = RunConfig.build(read_config_file(ROOT / "configs" / "toy.cfg"), env={})
    assert toy.model_config() == CPATConfig.toy()


def test_every_key_documented():
    from cpat.config import FIELD_DOCS
    assert set(known_keys()) == set(FIELD_DOCS)
