# -*- coding: utf-8 -*-

import os
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Tuple

import pytest

try:
    from facevox import ConfigLoader, FacevoxConfig, WarnEnum, ConfigError, config_hash
    from facevox._utils import apply_overrides, deep_merge
except ImportError:
    from src.facevox import ConfigLoader, FacevoxConfig, WarnEnum, ConfigError, config_hash
    from src.facevox._utils import apply_overrides, deep_merge


logger = logging.getLogger(__name__)


@pytest.fixture
def config_loader(tmp_path: Path) -> ConfigLoader:
    _config_loader = ConfigLoader(
        configs_dirs=str(tmp_path / "no_configs"), env_file_paths=str(tmp_path / "no.env")
    )

    yield _config_loader

    del _config_loader


@pytest.fixture
def configs_dir(tmp_path: Path) -> Tuple[str, Dict[str, Any]]:
    _tmp_configs_dir_pl = tmp_path / "configs"
    _tmp_configs_dir_pl.mkdir()
    _tmp_json_file_pl = (_tmp_configs_dir_pl / "10-train.json").resolve()
    _tmp_json_file_pl.write_text('{"train": {"seed": 99, "max_steps": 20} }')
    _tmp_yaml_file_pl = (_tmp_configs_dir_pl / "20-infer.yml").resolve()
    _tmp_yaml_file_pl.write_text("infer:\n  halve_i2i: true\ntrain:\n  max_steps: 30\n")
    _tmp_configs_dir = str(_tmp_configs_dir_pl)
    _expected = {
        "train": {"seed": 99, "max_steps": 30},
        "infer": {"halve_i2i": True},
    }

    yield _tmp_configs_dir, _expected

    del (
        _tmp_configs_dir_pl,
        _tmp_json_file_pl,
        _tmp_yaml_file_pl,
        _tmp_configs_dir,
        _expected,
    )


def test_init(config_loader: ConfigLoader):
    logger.info("Testing initialization of 'ConfigLoader'...")

    assert isinstance(config_loader, ConfigLoader)
    assert isinstance(config_loader.configs_dirs, list)
    assert config_loader.config_schema == FacevoxConfig
    assert config_loader.required_envs == []
    assert isinstance(config_loader.pre_load_hook, Callable)
    assert config_loader.pre_load_hook == ConfigLoader._PRE_LOAD_HOOK
    assert config_loader.config_files == []
    assert config_loader.overrides == []
    assert config_loader.extra_dir == None
    assert config_loader.config_data == {}
    assert config_loader.warn_mode == WarnEnum.IGNORE
    assert config_loader.config == None
    assert config_loader.config_hash == None

    logger.info("Done: Initialization of 'ConfigLoader'.\n")


def test_load_defaults(config_loader: ConfigLoader):
    logger.info("Testing 'load' method with defaults...")

    _config: FacevoxConfig = config_loader.load()

    assert isinstance(_config, FacevoxConfig)
    assert config_loader.config == _config
    assert _config.audio.mel_frames == 150
    assert _config.video.frames_per_utterance == 75
    assert _config.model.condition_dim == 512
    assert _config.train.loss_weights.mel == 45.0
    assert _config.train.loss_weights.fm == 2.0
    assert len(config_loader.config_hash) == 64
    assert config_loader.config_hash == config_hash(_config)

    logger.info("Done: 'load' method with defaults.\n")


def test_load_configs_dirs(config_loader: ConfigLoader, configs_dir: Tuple[str, Dict[str, Any]]):
    logger.info("Testing '_load_configs_dirs' method...")

    _configs_dir, _expected = configs_dir
    config_loader.configs_dirs = [_configs_dir]
    config_loader._load_configs_dirs()

    assert config_loader.config_data == _expected

    _config = config_loader.load()
    assert _config.train.seed == 99
    assert _config.train.max_steps == 30
    assert _config.infer.halve_i2i == True

    logger.info("Done: '_load_configs_dirs' method.\n")


def test_load_extra_dir(tmp_path: Path, config_loader: ConfigLoader, configs_dir: Tuple[str, Dict[str, Any]]):
    logger.info("Testing '_load_extra_dir' method...")

    _configs_dir, _expected = configs_dir
    config_loader.configs_dirs = [_configs_dir]
    config_loader._load_configs_dirs()

    _tmp_extra_dir_pl = tmp_path / "extra_dir"
    _tmp_extra_dir_pl.mkdir()
    (_tmp_extra_dir_pl / "extra.yaml").write_text("train:\n  seed: 5\neval:\n  split: val\n")
    _expected["train"]["seed"] = 5
    _expected["eval"] = {"split": "val"}

    config_loader.extra_dir = str(_tmp_extra_dir_pl)
    config_loader._load_extra_dir()

    assert config_loader.config_data == _expected

    logger.info("Done: '_load_extra_dir' method.\n")


def test_overrides_and_precedence(tmp_path: Path, configs_dir: Tuple[str, Dict[str, Any]], monkeypatch):
    logger.info("Testing overrides and source precedence...")

    _configs_dir, _ = configs_dir
    _file = tmp_path / "explicit.yaml"
    _file.write_text("train:\n  seed: 1\n")
    monkeypatch.setenv("FACEVOX_TRAIN__BATCH_SIZE", "3")
    monkeypatch.setenv("FACEVOX_TRAIN__SEED", "777")

    _config = ConfigLoader(
        configs_dirs=_configs_dir,
        config_files=[str(_file)],
        overrides=["train.max_steps=7", "infer.face_frames=average"],
        env_file_paths=str(tmp_path / "no.env"),
    ).load()

    # Explicit file beats the directory, overrides beat both, files beat the environment.
    assert _config.train.seed == 1
    assert _config.train.max_steps == 7
    assert _config.infer.face_frames.value == "average"
    # Environment fills keys no file sets.
    assert _config.train.batch_size == 3

    logger.info("Done: Overrides and source precedence.\n")


@pytest.mark.parametrize(
    "overrides",
    [
        ["train.no_such_key=1"],
        ["train.batch_size=0"],
        ["audio.hop=333"],
        ["model.msd_channels=[40, 16]"],
        ["not-an-override"],
        ["=1"],
    ],
)
def test_invalid_config(tmp_path: Path, overrides):
    logger.info(f"Testing invalid config {overrides}...")

    with pytest.raises(ConfigError) as _info:
        ConfigLoader(
            configs_dirs=str(tmp_path / "none"), overrides=overrides, env_file_paths=str(tmp_path / "no.env")
        ).load()

    assert _info.value.exit_code == 2
    assert _info.value.category == "config"

    logger.info("Done: Invalid config.\n")


@pytest.mark.parametrize(
    "content, expected",
    [
        ("FACEVOX_TEST_ENV=test", "test"),
        ("FACEVOX_TEST_DEBUG=false", "false"),
    ],
)
def test_load_dotenv_files(tmp_path: Path, config_loader: ConfigLoader, content: str, expected: str):
    logger.info("Testing '_load_dotenv_files' method...")

    _tmp_env_file_pl = (tmp_path / ".env").resolve()
    _tmp_env_file_pl.write_text(content)

    config_loader.env_file_paths = str(_tmp_env_file_pl)
    config_loader._load_dotenv_files()
    _env_var = content.split("=")[0]

    assert os.getenv(_env_var) == expected
    os.environ.pop(_env_var, None)

    logger.info("Done: '_load_dotenv_files' method.\n")


def test_check_required_envs(config_loader: ConfigLoader, monkeypatch):
    logger.info("Testing '_check_required_envs' method...")

    monkeypatch.setenv("FACEVOX_REQUIRED_ENV_VAR", "required_value")
    config_loader.required_envs = ["FACEVOX_REQUIRED_ENV_VAR"]
    config_loader._check_required_envs()

    with pytest.raises(KeyError):
        config_loader.required_envs = ["FACEVOX_NON_EXISTENT_ENV_VAR"]
        config_loader._check_required_envs()

    logger.info("Done: '_check_required_envs' method.\n")


def test_warn_mode_error(tmp_path: Path):
    logger.info("Testing 'warn_mode' ERROR on a missing configs dir...")

    with pytest.raises(FileNotFoundError):
        ConfigLoader(
            configs_dirs=str(tmp_path / "missing"),
            env_file_paths=str(tmp_path / "no.env"),
            warn_mode="ERROR",
        ).load()

    logger.info("Done: 'warn_mode' ERROR.\n")


def test_attributes(config_loader: ConfigLoader):
    logger.info("Testing attribute validation...")

    config_loader.configs_dirs = "/tmp/pytest/configs_dir"
    assert config_loader.configs_dirs == ["/tmp/pytest/configs_dir"]

    with pytest.raises(TypeError):
        config_loader.configs_dirs = 3.14
    with pytest.raises(ValueError):
        config_loader.configs_dirs = ""
    with pytest.raises(TypeError):
        config_loader.config = {"train": {}}
    with pytest.raises(TypeError):
        config_loader.config_data = "invalid_val"
    with pytest.raises(TypeError):
        config_loader.required_envs = "invalid_val"
    with pytest.raises(ValueError):
        config_loader.required_envs = ["FACEVOX_ENV", 1, None]
    with pytest.raises(TypeError):
        config_loader.pre_load_hook = "not callable"
    with pytest.raises(ValueError):
        config_loader.warn_mode = "LOUD"

    logger.info("Done: Attribute validation.\n")


def test_pre_load_hook(tmp_path: Path):
    logger.info("Testing 'pre_load_hook'...")

    def _pre_load_hook(config_data: Dict[str, Any]) -> Dict[str, Any]:
        config_data.setdefault("train", {})["seed"] = 31
        return config_data

    _config = ConfigLoader(
        configs_dirs=str(tmp_path / "none"),
        env_file_paths=str(tmp_path / "no.env"),
        pre_load_hook=_pre_load_hook,
    ).load()
    assert _config.train.seed == 31

    logger.info("Done: 'pre_load_hook'.\n")


def test_deep_merge_and_overrides():
    logger.info("Testing 'deep_merge' and 'apply_overrides'...")

    _base = {"a": {"b": 1, "c": {"d": 2}}, "e": [1, 2]}
    _merged = deep_merge(_base, {"a": {"c": {"d": 3, "f": 4}}, "e": [3]})
    assert _merged == {"a": {"b": 1, "c": {"d": 3, "f": 4}}, "e": [3]}
    assert _base["a"]["c"]["d"] == 2

    _data = apply_overrides({"train": {"seed": 1}}, ["train.seed=2", "train.lr=0.001", "infer.halve_i2i=true"])
    assert _data == {"train": {"seed": 2, "lr": 0.001}, "infer": {"halve_i2i": True}}

    with pytest.raises(ValueError):
        apply_overrides({}, ["train.seed"])

    logger.info("Done: 'deep_merge' and 'apply_overrides'.\n")


def test_config_hash_stability():
    logger.info("Testing 'config_hash'...")

    _a = FacevoxConfig()
    _b = FacevoxConfig(train={"seed": 1234})
    _c = FacevoxConfig(train={"seed": 1})

    assert config_hash(_a) == config_hash(_b)
    assert config_hash(_a) != config_hash(_c)

    logger.info("Done: 'config_hash'.\n")
