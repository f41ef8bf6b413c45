# -*- coding: utf-8 -*-

## Standard libraries
import os
import copy
import json
import random
import hashlib
from typing import Any, Dict, List, Union, Mapping

## Third-party libraries
import yaml
import numpy as np
import torch
from loguru import logger
from pydantic import validate_call


@validate_call
def deep_merge(dict1: dict, dict2: dict) -> dict:
    """Return a new dictionary that's the result of a deep merge of two dictionaries.
    If there are conflicts, values from `dict2` will overwrite those in `dict1`.

    Args:
        dict1 (dict, required): The base dictionary that will be merged.
        dict2 (dict, required): The dictionary to merge into `dict1`.

    Returns:
        dict: The merged dictionary.
    """

    _merged = copy.deepcopy(dict1)
    for _key, _val in dict2.items():
        if (
            _key in _merged
            and isinstance(_merged[_key], dict)
            and isinstance(_val, dict)
        ):
            _merged[_key] = deep_merge(_merged[_key], _val)
        else:
            _merged[_key] = copy.deepcopy(_val)

    return _merged


@validate_call
def apply_overrides(config_data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """Apply dotted `key=value` overrides on top of `config_data`.
    Values are parsed as YAML scalars, so `train.max_steps=10` gives an <int>.

    Args:
        config_data (dict     , required): Base config data.
        overrides   (List[str], required): Overrides like `['train.seed=3', 'infer.halve_i2i=true']`.

    Raises:
        ValueError: If an override has no '=' or an empty key.

    Returns:
        dict: New config data with all overrides applied.
    """

    _data = copy.deepcopy(config_data)
    for _override in overrides:
        if "=" not in _override:
            raise ValueError(f"Override '{_override}' is invalid, must be 'dotted.key=value'!")

        _key, _raw_val = _override.split("=", 1)
        _key = _key.strip()
        if (_key == "") or any(_part == "" for _part in _key.split(".")):
            raise ValueError(f"Override '{_override}' has an empty key!")

        _val = yaml.safe_load(_raw_val) if _raw_val.strip() != "" else ""
        _patch: Dict[str, Any] = {}
        _cursor = _patch
        _parts = _key.split(".")
        for _part in _parts[:-1]:
            _cursor[_part] = {}
            _cursor = _cursor[_part]
        _cursor[_parts[-1]] = _val
        _data = deep_merge(_data, _patch)

    return _data


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)


def content_hash(data: Any) -> str:
    """sha256 hex digest of the canonical JSON form of `data`."""

    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def sha256_file(file_path: Union[str, os.PathLike], chunk_size: int = 1 << 20) -> str:
    _hasher = hashlib.sha256()
    with open(file_path, "rb") as _file:
        for _chunk in iter(lambda: _file.read(chunk_size), b""):
            _hasher.update(_chunk)

    return _hasher.hexdigest()


def state_dict_hash(state_dict: Mapping[str, torch.Tensor]) -> str:
    """Order-independent sha256 over names, dtypes, shapes and raw bytes of tensors."""

    _hasher = hashlib.sha256()
    for _name in sorted(state_dict.keys()):
        _tensor = state_dict[_name].detach().cpu().contiguous()
        _hasher.update(_name.encode("utf-8"))
        _hasher.update(str(_tensor.dtype).encode("utf-8"))
        _hasher.update(str(tuple(_tensor.shape)).encode("utf-8"))
        _hasher.update(_tensor.numpy().tobytes() if _tensor.numel() else b"")

    return _hasher.hexdigest()


def seed_everything(seed: int, deterministic: bool = True) -> None:
    """Seed python, numpy and torch, and switch torch to deterministic kernels."""

    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        if hasattr(torch.backends, "cudnn"):
            torch.backends.cudnn.benchmark = False
            torch.backends.cudnn.deterministic = True

    logger.debug(f"Seeded everything with {seed} (deterministic={deterministic}).")


def ensure_dir(dir_path: Union[str, os.PathLike]) -> str:
    _dir_path = os.fspath(dir_path)
    os.makedirs(_dir_path, exist_ok=True)
    return _dir_path


__all__ = [
    "deep_merge",
    "apply_overrides",
    "canonical_json",
    "content_hash",
    "sha256_file",
    "state_dict_hash",
    "seed_everything",
    "ensure_dir",
]
