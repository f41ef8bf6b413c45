# -*- coding: utf-8 -*-

## Standard libraries
import os
import glob
import json
import copy
from typing import Union, List, Callable, Type, Dict, Any

## Third-party libraries
import yaml
from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, ValidationError, validate_call
from pydantic_settings import BaseSettings

## Internal modules
from ._consts import WarnEnum, EXTRA_DIR_ENV, CONFIG_FILE_PATTERNS
from ._exceptions import ConfigError
from ._schemas import FacevoxConfig
from ._utils import deep_merge, apply_overrides, content_hash


class ConfigLoader:
    """Layered config loader for every `facevox` subcommand.

    Attributes:
        _ENV_FILE_PATH (str                     ): Default dotenv file path to load. Defaults to '${PWD}/.env'.
        _CONFIGS_DIR   (str                     ): Default configs directory. Defaults to '${PWD}/configs'.
        _PRE_LOAD_HOOK (function                ): Default lambda function for `pre_load_hook`. Defaults to `lambda config_data: config_data`.

        config         (Union[BaseSettings,
                              BaseModel        ]): Validated config object (based on `config_schema`). Defaults to None.
        config_schema  (Union[Type[BaseSettings],
                              Type[BaseModel]  ]): Config schema class to validate with. Defaults to `FacevoxConfig`.
        config_data    (dict                    ): Merged raw data from config files. Defaults to {}.
        configs_dirs   (List[str]               ): Configs directories to load all config files from. Defaults to [ConfigLoader._CONFIGS_DIR].
        extra_dir      (str                     ): Extra configs directory, also read from the 'FACEVOX_EXTRA_DIR' environment variable.
        config_files   (List[str]               ): Explicit config files loaded after the directories (e.g. `--config` flag). Defaults to [].
        overrides      (List[str]               ): Dotted `key=value` overrides applied last. Defaults to [].
        env_file_paths (List[str]               ): Dotenv file paths to load. Defaults to [ConfigLoader._ENV_FILE_PATH].
        required_envs  (List[str]               ): Required environment variables to check. Defaults to [].
        pre_load_hook  (function                ): Custom method executed before validating `config`.
        warn_mode      (WarnEnum                ): Warning mode for missing files and directories. Defaults to `WarnEnum.IGNORE`.
    """

    _ENV_FILE_PATH = os.path.join(os.getcwd(), ".env")
    _CONFIGS_DIR = os.path.join(os.getcwd(), "configs")
    _PRE_LOAD_HOOK = lambda config_data: config_data

    def __init__(
        self,
        config_schema: Union[Type[BaseSettings], Type[BaseModel]] = FacevoxConfig,
        configs_dirs: Union[List[str], str] = _CONFIGS_DIR,
        config_files: Union[List[str], str, None] = None,
        overrides: Union[List[str], None] = None,
        env_file_paths: Union[List[str], str] = _ENV_FILE_PATH,
        required_envs: Union[List[str], None] = None,
        pre_load_hook: Callable = _PRE_LOAD_HOOK,
        extra_dir: Union[str, None] = None,
        config_data: Union[Dict[str, Any], None] = None,
        warn_mode: Union[WarnEnum, str] = WarnEnum.IGNORE,
        auto_load: bool = False,
    ):
        """ConfigLoader constructor method.

        Args:
            config_schema  (Union[Type[BaseSettings],
                                  Type[BaseModel]  ], optional): Config schema class. Defaults to `FacevoxConfig`.
            configs_dirs   (Union[List[str], str]   , optional): Configs directories. Defaults to `ConfigLoader._CONFIGS_DIR`.
            config_files   (Union[List[str], str]   , optional): Explicit config files loaded after the directories. Defaults to None.
            overrides      (List[str]               , optional): Dotted `key=value` overrides. Defaults to None.
            env_file_paths (Union[List[str], str]   , optional): Dotenv file paths. Defaults to `ConfigLoader._ENV_FILE_PATH`.
            required_envs  (List[str]               , optional): Required environment variables. Defaults to None.
            pre_load_hook  (function                , optional): Method executed before validation. Defaults to `ConfigLoader._PRE_LOAD_HOOK`.
            extra_dir      (Union[str, None]        , optional): Extra configs directory. Defaults to None.
            config_data    (dict                    , optional): Base config data before everything. Defaults to None.
            warn_mode      (WarnEnum                , optional): Warning mode. Defaults to `WarnEnum.IGNORE`.
            auto_load      (bool                    , optional): Load configs on init. Defaults to False.
        """

        self.config_schema = config_schema
        self.configs_dirs = configs_dirs
        self.config_files = config_files or []
        self.overrides = overrides or []
        self.env_file_paths = env_file_paths
        self.required_envs = required_envs or []
        self.pre_load_hook = pre_load_hook
        if extra_dir:
            self.extra_dir = extra_dir
        self.config_data = config_data or {}
        self.warn_mode = warn_mode

        if auto_load:
            self.load()

    def load(self) -> Union[BaseSettings, BaseModel]:
        """Load and validate every config into `config`.
        Load order:
            1.   Load all dotenv files from `env_file_paths` into environment variables.
            2.   Check if required environment variables exist or not.
            3.   Load all config files from `configs_dirs` into `config_data`.
            3.1. Load each YAML/JSON file of a directory, sorted by name.
            4.   Load extra config files from `extra_dir` into `config_data`.
            5.   Load explicit `config_files` into `config_data`.
            6.   Apply dotted `overrides`.
            7.   Execute `pre_load_hook` method to modify `config_data`.
            8.   Init `config_schema` with `config_data` into final `config`.

        Raises:
            ConfigError: If overrides are malformed or `config_schema` validation failed.
            Exception  : If `pre_load_hook` method failed to execute.

        Returns:
            Union[BaseSettings, BaseModel]: Validated config object.
        """

        self._log("Loading all configs...")

        self._load_dotenv_files()
        self._check_required_envs()
        self._load_configs_dirs()
        self._load_extra_dir()
        self._load_config_files()

        try:
            # 6. Apply dotted `overrides`:
            self.config_data = apply_overrides(self.config_data, self.overrides)
        except (ValueError, yaml.YAMLError) as err:
            raise ConfigError(str(err)) from err

        try:
            # 7. Execute `pre_load_hook` method to modify `config_data`:
            self.config_data = self.pre_load_hook(self.config_data)
        except Exception:
            logger.critical("Failed to execute `pre_load_hook` method:")
            raise

        try:
            # 8. Init `config_schema` with `config_data` into final `config`:
            self.config = self.config_schema(**self.config_data)
        except ValidationError as err:
            logger.critical("Failed to init `config_schema`:")
            raise ConfigError(str(err)) from err

        self._log("Successfully loaded all configs!", success=True)
        return self.config

    @property
    def config_hash(self) -> Union[str, None]:
        """sha256 over the canonical JSON dump of the validated config."""

        if self.config is None:
            return None

        return content_hash(self.config.model_dump(mode="json"))

    def _log(self, message: str, success: bool = False):
        if self.warn_mode == WarnEnum.ALWAYS:
            if success:
                logger.success(message)
            else:
                logger.info(message)
        elif self.warn_mode == WarnEnum.DEBUG:
            logger.debug(message)

    def _warn_missing(self, message: str):
        if self.warn_mode == WarnEnum.ERROR:
            raise FileNotFoundError(message)
        elif self.warn_mode == WarnEnum.ALWAYS:
            logger.warning(message)
        elif self.warn_mode == WarnEnum.DEBUG:
            logger.debug(message)

    def _load_dotenv_files(self):
        """1. Load all dotenv files from `env_file_paths` into environment variables."""

        for _env_file_path in self.env_file_paths:
            self._load_dotenv_file(env_file_path=_env_file_path)

    @validate_call
    def _load_dotenv_file(self, env_file_path: str):
        if not os.path.isabs(env_file_path):
            env_file_path = os.path.join(os.getcwd(), env_file_path)

        if os.path.isfile(env_file_path):
            load_dotenv(dotenv_path=env_file_path, override=True, encoding="utf-8")
        else:
            self._warn_missing(f"'{env_file_path}' file is not exist!")

    def _check_required_envs(self):
        """2. Check if required environment variables exist or not.

        Raises:
            KeyError: If a required environment variable does not exist.
        """

        for _env in self.required_envs:
            try:
                os.environ[_env]
            except KeyError:
                logger.critical(f"Missing required '{_env}' environment variable.")
                raise

    def _load_configs_dirs(self):
        """3. Load all config files from `configs_dirs` into `config_data`."""

        for _config_dir in self.configs_dirs:
            self._load_configs_dir(configs_dir=_config_dir)

    @validate_call
    def _load_configs_dir(self, configs_dir: str):
        """3.1. Load config files from each config directory into `config_data`."""

        if not os.path.isabs(configs_dir):
            configs_dir = os.path.join(os.getcwd(), configs_dir)

        if os.path.isdir(configs_dir):
            _file_paths = sorted(
                _path for _pattern in CONFIG_FILE_PATTERNS for _path in glob.glob(os.path.join(configs_dir, _pattern))
            )

            for _file_path in _file_paths:
                self._load_file(file_path=_file_path)
        else:
            self._warn_missing(f"'{configs_dir}' directory is not exist!")

    def _load_extra_dir(self):
        """4. Load extra config files from `extra_dir` into `config_data`."""

        _env_extra_dir = os.getenv(EXTRA_DIR_ENV)
        if _env_extra_dir:
            self.extra_dir = _env_extra_dir

        if self.extra_dir:
            self._load_configs_dir(configs_dir=self.extra_dir)

    def _load_config_files(self):
        """5. Load explicit `config_files` into `config_data`.

        Raises:
            ConfigError: If an explicit config file does not exist.
        """

        for _file_path in self.config_files:
            if not os.path.isfile(_file_path):
                raise ConfigError(f"Config file '{_file_path}' does not exist!")

            self._load_file(file_path=_file_path)

    @validate_call
    def _load_file(self, file_path: str):
        """Load one YAML or JSON config file into `config_data`.

        Raises:
            ConfigError: If the file can't be parsed or isn't a mapping.
        """

        try:
            with open(file_path, "r", encoding="utf-8") as _file:
                if file_path.lower().endswith((".yml", ".yaml")):
                    _new_config_dict = yaml.safe_load(_file) or {}
                else:
                    _new_config_dict = json.load(_file) or {}
        except (OSError, yaml.YAMLError, json.JSONDecodeError) as err:
            logger.critical(f"Failed to load '{file_path}' config file:")
            raise ConfigError(f"Failed to parse '{file_path}': {err}") from err

        if not isinstance(_new_config_dict, dict):
            raise ConfigError(f"'{file_path}' top level must be a mapping!")

        self.config_data = deep_merge(self.config_data, _new_config_dict)

    ### ATTRIBUTES ###

    @property
    def config(self) -> Union[BaseSettings, BaseModel, None]:
        return getattr(self, "_config", None)

    @config.setter
    def config(self, config: Union[BaseSettings, BaseModel]):
        if not isinstance(config, (BaseSettings, BaseModel)):
            raise TypeError(f"`config` must be a pydantic model instance, got {type(config)}!")

        self._config = copy.deepcopy(config)

    @property
    def config_schema(self) -> Union[Type[BaseSettings], Type[BaseModel]]:
        return getattr(self, "_config_schema", FacevoxConfig)

    @config_schema.setter
    def config_schema(self, config_schema: Union[Type[BaseSettings], Type[BaseModel]]):
        if not (isinstance(config_schema, type) and issubclass(config_schema, (BaseSettings, BaseModel))):
            raise TypeError(f"`config_schema` must be a pydantic model class, got {config_schema!r}!")

        self._config_schema = config_schema

    @property
    def config_data(self) -> Dict[str, Any]:
        return getattr(self, "_config_data", {})

    @config_data.setter
    def config_data(self, config_data: Dict[str, Any]):
        if not isinstance(config_data, dict):
            raise TypeError(f"`config_data` must be a <dict>, got {type(config_data)}!")

        self._config_data = copy.deepcopy(config_data)

    @property
    def configs_dirs(self) -> List[str]:
        return getattr(self, "_configs_dirs", [ConfigLoader._CONFIGS_DIR])

    @configs_dirs.setter
    def configs_dirs(self, configs_dirs: Union[List[str], str]):
        self._configs_dirs = self._as_str_list(configs_dirs, "configs_dirs")

    @property
    def config_files(self) -> List[str]:
        return getattr(self, "_config_files", [])

    @config_files.setter
    def config_files(self, config_files: Union[List[str], str]):
        self._config_files = (
            [] if config_files == [] else self._as_str_list(config_files, "config_files")
        )

    @property
    def overrides(self) -> List[str]:
        return getattr(self, "_overrides", [])

    @overrides.setter
    def overrides(self, overrides: List[str]):
        self._overrides = self._as_str_list(overrides, "overrides", allow_str=False)

    @property
    def extra_dir(self) -> Union[str, None]:
        return getattr(self, "_extra_dir", None)

    @extra_dir.setter
    def extra_dir(self, extra_dir: str):
        if not isinstance(extra_dir, str):
            raise TypeError(f"`extra_dir` must be a <str>, got {type(extra_dir)}!")

        extra_dir = extra_dir.strip()
        if not extra_dir:
            raise ValueError("`extra_dir` is empty!")

        self._extra_dir = extra_dir if os.path.isabs(extra_dir) else os.path.join(os.getcwd(), extra_dir)

    @property
    def env_file_paths(self) -> List[str]:
        return getattr(self, "_env_file_paths", [ConfigLoader._ENV_FILE_PATH])

    @env_file_paths.setter
    def env_file_paths(self, env_file_paths: Union[List[str], str]):
        self._env_file_paths = self._as_str_list(env_file_paths, "env_file_paths")

    @property
    def required_envs(self) -> List[str]:
        return getattr(self, "_required_envs", [])

    @required_envs.setter
    def required_envs(self, required_envs: List[str]):
        self._required_envs = self._as_str_list(required_envs, "required_envs", allow_str=False)

    @property
    def pre_load_hook(self) -> Callable:
        return getattr(self, "_pre_load_hook", ConfigLoader._PRE_LOAD_HOOK)

    @pre_load_hook.setter
    def pre_load_hook(self, pre_load_hook: Callable):
        if not callable(pre_load_hook):
            raise TypeError(f"`pre_load_hook` must be callable, got {type(pre_load_hook)}!")

        self._pre_load_hook = pre_load_hook

    @property
    def warn_mode(self) -> WarnEnum:
        return getattr(self, "_warn_mode", WarnEnum.IGNORE)

    @warn_mode.setter
    def warn_mode(self, warn_mode: Union[WarnEnum, str]):
        if not isinstance(warn_mode, (WarnEnum, str)):
            raise TypeError(f"`warn_mode` must be a <WarnEnum> or <str>, got {type(warn_mode)}!")

        try:
            self._warn_mode = WarnEnum(warn_mode)
        except ValueError:
            raise ValueError(
                f"`warn_mode` '{warn_mode}' is invalid, expected one of {[_m.value for _m in WarnEnum]}!"
            ) from None

    ### ATTRIBUTES ###

    @staticmethod
    def _as_str_list(value: Union[List[str], str], name: str, allow_str: bool = True) -> List[str]:
        if not (isinstance(value, list) or (allow_str and isinstance(value, str))):
            raise TypeError(f"`{name}` must be a <list>{' or <str>' if allow_str else ''}, got {type(value)}!")

        if isinstance(value, str):
            if not value.strip():
                raise ValueError(f"`{name}` is empty!")
            return [value.strip()]

        if not all(isinstance(_val, str) for _val in value):
            raise ValueError(f"`{name}` {value} must contain only <str> items!")

        return list(value)


__all__ = ["ConfigLoader"]
