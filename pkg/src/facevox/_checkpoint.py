# -*- coding: utf-8 -*-

## Standard libraries
import os
import json
import random
import struct
import hashlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

## Third-party libraries
import numpy as np
import torch
import torch.nn as nn
from loguru import logger

## Internal modules
from ._consts import CHECKPOINT_MAGIC, CHECKPOINT_SCHEMA_VERSION, MODULE_NAMES, StageEnum
from ._exceptions import CheckpointError, CheckpointIntegrityError, CheckpointVersionError
from ._utils import state_dict_hash


_LENGTH = struct.Struct("<Q")


@dataclass
class Checkpoint:
    """Everything needed to resume or reuse a training stage.

    `modules` maps a module name (see `MODULE_NAMES`) to its state dict. `optimizers`,
    `schedulers`, `rng` and `extra` may hold any nesting of dicts, lists, tuples,
    scalars, strings, tensors and numpy arrays.
    """

    stage: StageEnum
    step: int = 0
    config_hash: str = ""
    modules: Dict[str, Dict[str, torch.Tensor]] = field(default_factory=dict)
    optimizers: Dict[str, Any] = field(default_factory=dict)
    schedulers: Dict[str, Any] = field(default_factory=dict)
    rng: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)
    schema_version: int = CHECKPOINT_SCHEMA_VERSION

    def module_hashes(self) -> Dict[str, str]:
        return {_name: state_dict_hash(_state) for _name, _state in self.modules.items()}


def capture_rng() -> Dict[str, Any]:
    return {
        "torch": torch.get_rng_state(),
        "numpy": np.random.get_state(),
        "python": random.getstate(),
    }


def restore_rng(state: Mapping[str, Any]) -> None:
    if "torch" in state:
        torch.set_rng_state(state["torch"])

    if "numpy" in state:
        np.random.set_state(tuple(state["numpy"]))

    if "python" in state:
        _version, _internal, _gauss = state["python"]
        random.setstate((_version, tuple(_internal), _gauss))


class _Packer:
    def __init__(self):
        self.blobs: List[Tuple[str, np.ndarray, str]] = []

    def pack(self, obj: Any, path: str) -> Any:
        if torch.is_tensor(obj):
            _array = obj.detach().cpu().contiguous().numpy()
            self.blobs.append((path, _array, "torch"))
            return {"__blob__": path}

        if isinstance(obj, np.ndarray):
            self.blobs.append((path, np.ascontiguousarray(obj), "numpy"))
            return {"__blob__": path}

        if isinstance(obj, np.generic):
            return obj.item()

        if isinstance(obj, (StageEnum,)):
            return obj.value

        if isinstance(obj, dict):
            if all(isinstance(_k, str) for _k in obj):
                return {_k: self.pack(obj[_k], f"{path}/{_k}") for _k in sorted(obj)}
            return {"__items__": [[_k, self.pack(_v, f"{path}/{_k}")] for _k, _v in obj.items()]}

        if isinstance(obj, tuple):
            return {"__tuple__": [self.pack(_v, f"{path}/{_i}") for _i, _v in enumerate(obj)]}

        if isinstance(obj, list):
            return [self.pack(_v, f"{path}/{_i}") for _i, _v in enumerate(obj)]

        if (obj is None) or isinstance(obj, (bool, int, float, str)):
            return obj

        raise CheckpointError(f"Can't store '{path}' of type {type(obj).__name__} in a checkpoint!")


def _unpack(obj: Any, blobs: Mapping[str, Any]) -> Any:
    if isinstance(obj, dict):
        if "__blob__" in obj:
            return blobs[obj["__blob__"]]
        if "__items__" in obj:
            return {_k: _unpack(_v, blobs) for _k, _v in obj["__items__"]}
        if "__tuple__" in obj:
            return tuple(_unpack(_v, blobs) for _v in obj["__tuple__"])
        return {_k: _unpack(_v, blobs) for _k, _v in obj.items()}

    if isinstance(obj, list):
        return [_unpack(_v, blobs) for _v in obj]

    return obj


def save_checkpoint(checkpoint: Checkpoint, file_path: Union[str, os.PathLike]) -> str:
    """Write `checkpoint` atomically: magic, header length, JSON header, raw blobs.

    Returns:
        str: sha256 of the written file.
    """

    _packer = _Packer()
    _payload = {
        "modules": _packer.pack(checkpoint.modules, "modules"),
        "optimizers": _packer.pack(checkpoint.optimizers, "optimizers"),
        "schedulers": _packer.pack(checkpoint.schedulers, "schedulers"),
        "rng": _packer.pack(checkpoint.rng, "rng"),
        "extra": _packer.pack(checkpoint.extra, "extra"),
    }

    _index = []
    _offset = 0
    for _name, _array, _kind in _packer.blobs:
        _nbytes = int(_array.nbytes)
        _index.append(
            {
                "name": _name,
                "kind": _kind,
                "dtype": _array.dtype.str,
                "shape": list(_array.shape),
                "offset": _offset,
                "nbytes": _nbytes,
                "sha256": hashlib.sha256(_array.tobytes()).hexdigest(),
            }
        )
        _offset += _nbytes

    _header = {
        "schema_version": checkpoint.schema_version,
        "stage": StageEnum(checkpoint.stage).value,
        "step": int(checkpoint.step),
        "config_hash": checkpoint.config_hash,
        "blobs": _index,
        "payload": _payload,
    }
    _header_bytes = json.dumps(_header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    _path = os.fspath(file_path)
    _dir = os.path.dirname(os.path.abspath(_path))
    os.makedirs(_dir, exist_ok=True)
    _tmp_path = f"{_path}.tmp"
    _hasher = hashlib.sha256()
    with open(_tmp_path, "wb") as _file:
        for _chunk in (CHECKPOINT_MAGIC, _LENGTH.pack(len(_header_bytes)), _header_bytes):
            _file.write(_chunk)
            _hasher.update(_chunk)
        for _, _array, _ in _packer.blobs:
            _bytes = _array.tobytes()
            _file.write(_bytes)
            _hasher.update(_bytes)
    os.replace(_tmp_path, _path)

    logger.debug(
        f"Saved '{checkpoint.stage}' checkpoint at step {checkpoint.step} to '{_path}' ({len(_packer.blobs)} blobs)."
    )
    return _hasher.hexdigest()


def load_checkpoint(file_path: Union[str, os.PathLike]) -> Checkpoint:
    """Read and fully verify a checkpoint before returning it.

    Raises:
        CheckpointError         : If the file doesn't exist.
        CheckpointIntegrityError: If the file is truncated, corrupted or not a checkpoint.
        CheckpointVersionError  : If the schema version isn't supported.
    """

    _path = os.fspath(file_path)
    if not os.path.isfile(_path):
        raise CheckpointError(f"Checkpoint '{_path}' doesn't exist!")

    with open(_path, "rb") as _file:
        _raw = _file.read()

    _prefix = len(CHECKPOINT_MAGIC) + _LENGTH.size
    if (len(_raw) < _prefix) or (_raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC):
        raise CheckpointIntegrityError(f"'{_path}' is not a checkpoint or its header is truncated!")

    (_header_length,) = _LENGTH.unpack(_raw[len(CHECKPOINT_MAGIC) : _prefix])
    if len(_raw) < _prefix + _header_length:
        raise CheckpointIntegrityError(f"'{_path}' header is truncated!")

    try:
        _header = json.loads(_raw[_prefix : _prefix + _header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointIntegrityError(f"'{_path}' header is corrupted: {err}") from err

    _version = _header.get("schema_version")
    if _version != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointVersionError(
            f"'{_path}' has checkpoint schema v{_version}, this build reads v{CHECKPOINT_SCHEMA_VERSION}!"
        )

    _data_start = _prefix + _header_length
    _blobs: Dict[str, Any] = {}
    for _entry in _header["blobs"]:
        _start = _data_start + _entry["offset"]
        _end = _start + _entry["nbytes"]
        if _end > len(_raw):
            raise CheckpointIntegrityError(f"'{_path}' is truncated inside blob '{_entry['name']}'!")

        _bytes = _raw[_start:_end]
        if hashlib.sha256(_bytes).hexdigest() != _entry["sha256"]:
            raise CheckpointIntegrityError(f"'{_path}' blob '{_entry['name']}' fails its checksum!")

        _array = np.frombuffer(_bytes, dtype=np.dtype(_entry["dtype"])).reshape(_entry["shape"]).copy()
        _blobs[_entry["name"]] = torch.from_numpy(_array) if _entry["kind"] == "torch" else _array

    _expected_end = _data_start + sum(_entry["nbytes"] for _entry in _header["blobs"])
    if len(_raw) != _expected_end:
        raise CheckpointIntegrityError(f"'{_path}' has {len(_raw) - _expected_end:+d} unexpected bytes!")

    _payload = _unpack(_header["payload"], _blobs)
    return Checkpoint(
        stage=StageEnum(_header["stage"]),
        step=int(_header["step"]),
        config_hash=_header["config_hash"],
        modules=_payload["modules"],
        optimizers=_payload["optimizers"],
        schedulers=_payload["schedulers"],
        rng=_payload["rng"],
        extra=_payload["extra"],
        schema_version=_version,
    )


def apply_checkpoint(
    checkpoint: Checkpoint,
    modules: Mapping[str, nn.Module],
    optimizers: Optional[Mapping[str, torch.optim.Optimizer]] = None,
    schedulers: Optional[Mapping[str, Any]] = None,
    restore_rng_state: bool = False,
) -> List[str]:
    """Load module (and optionally optimizer/scheduler/RNG) state; nothing is applied unless all of it fits.

    Modules in `modules` that the checkpoint lacks keep their current (fresh) parameters.

    Raises:
        CheckpointError: If a stored state dict doesn't match its module.

    Returns:
        List[str]: Names of modules absent from the checkpoint.
    """

    for _name in checkpoint.modules:
        if _name not in MODULE_NAMES:
            raise CheckpointError(f"Checkpoint holds unknown module '{_name}'!")

    for _name, _state in checkpoint.modules.items():
        if _name not in modules:
            continue

        _current = modules[_name].state_dict()
        if set(_current) != set(_state):
            _diff = sorted(set(_current) ^ set(_state))
            raise CheckpointError(f"Checkpoint module '{_name}' keys don't match: {_diff[:5]}")

        for _key, _tensor in _state.items():
            if tuple(_current[_key].shape) != tuple(_tensor.shape):
                raise CheckpointError(
                    f"Checkpoint '{_name}.{_key}' has shape {tuple(_tensor.shape)}, module expects {tuple(_current[_key].shape)}!"
                )

    for _name, _state in checkpoint.modules.items():
        if _name in modules:
            modules[_name].load_state_dict(_state)

    for _name, _optimizer in (optimizers or {}).items():
        if _name in checkpoint.optimizers:
            _optimizer.load_state_dict(checkpoint.optimizers[_name])

    for _name, _scheduler in (schedulers or {}).items():
        if _name in checkpoint.schedulers:
            _scheduler.load_state_dict(checkpoint.schedulers[_name])

    if restore_rng_state and checkpoint.rng:
        restore_rng(checkpoint.rng)

    _missing = [_name for _name in modules if _name not in checkpoint.modules]
    if _missing:
        logger.warning(
            f"'{checkpoint.stage.value}' checkpoint has no state for {_missing}, they stay freshly initialized."
        )

    return _missing


__all__ = [
    "Checkpoint",
    "capture_rng",
    "restore_rng",
    "save_checkpoint",
    "load_checkpoint",
    "apply_checkpoint",
]
