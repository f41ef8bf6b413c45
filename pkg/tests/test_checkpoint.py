# -*- coding: utf-8 -*-

import json
import random
import logging
from pathlib import Path

import numpy as np
import pytest
import torch

try:
    from facevox import (
        Checkpoint,
        StageEnum,
        CheckpointError,
        CheckpointIntegrityError,
        CheckpointVersionError,
        save_checkpoint,
        load_checkpoint,
        apply_checkpoint,
    )
    from facevox._checkpoint import capture_rng, restore_rng
    from facevox._train import build_modules, snapshot
    from facevox._utils import sha256_file
except ImportError:
    from src.facevox import (
        Checkpoint,
        StageEnum,
        CheckpointError,
        CheckpointIntegrityError,
        CheckpointVersionError,
        save_checkpoint,
        load_checkpoint,
        apply_checkpoint,
    )
    from src.facevox._checkpoint import capture_rng, restore_rng
    from src.facevox._train import build_modules, snapshot
    from src.facevox._utils import sha256_file


logger = logging.getLogger(__name__)


def _assert_state_equal(a, b) -> None:
    assert set(a) == set(b)
    for _key in a:
        assert torch.equal(a[_key], b[_key]), _key


@pytest.fixture
def lip_checkpoint(tiny_config) -> Checkpoint:
    torch.manual_seed(5)
    _modules = build_modules(tiny_config, ("lip",))
    _optimizer = torch.optim.Adam(_modules["lip"].parameters(), lr=1e-3)
    _modules["lip"](torch.rand(1, 4, 3, 144, 144)).sum().backward()
    _optimizer.step()
    return Checkpoint(
        stage=StageEnum.PRETRAIN_LIP,
        step=17,
        config_hash="abc",
        modules={"lip": snapshot(_modules["lip"])},
        optimizers={"lip": _optimizer.state_dict()},
        rng=capture_rng(),
        extra={"val_cer": 0.25, "history": [1.0, 0.5], "nested": {"pair": (1, "a")}, "none": None},
    )


def test_round_trip(tmp_path: Path, lip_checkpoint: Checkpoint):
    logger.info("Testing checkpoint round trip...")

    _path = tmp_path / "lip.ckpt"
    _digest = save_checkpoint(lip_checkpoint, _path)
    assert _digest == sha256_file(_path)
    assert not (tmp_path / "lip.ckpt.tmp").exists()

    _loaded = load_checkpoint(_path)
    assert _loaded.stage == StageEnum.PRETRAIN_LIP
    assert _loaded.step == 17
    assert _loaded.config_hash == "abc"
    _assert_state_equal(_loaded.modules["lip"], lip_checkpoint.modules["lip"])
    assert _loaded.module_hashes() == lip_checkpoint.module_hashes()
    assert _loaded.extra == {"val_cer": 0.25, "history": [1.0, 0.5], "nested": {"pair": (1, "a")}, "none": None}

    _state = _loaded.optimizers["lip"]
    assert set(_state["state"]) == set(lip_checkpoint.optimizers["lip"]["state"])
    _original = lip_checkpoint.optimizers["lip"]["state"][0]["exp_avg"]
    assert torch.equal(_state["state"][0]["exp_avg"], _original)

    # same content, same bytes
    assert save_checkpoint(_loaded, tmp_path / "again.ckpt") == _digest

    logger.info("Done: Checkpoint round trip.\n")


def test_rng_round_trip(tmp_path: Path):
    logger.info("Testing RNG state capture and restore through a checkpoint...")

    torch.manual_seed(1)
    np.random.seed(1)
    random.seed(1)
    save_checkpoint(Checkpoint(stage=StageEnum.JOINT, rng=capture_rng()), tmp_path / "rng.ckpt")
    _expected = (torch.rand(3), np.random.rand(3), random.random())

    torch.manual_seed(99)
    np.random.seed(99)
    random.seed(99)
    restore_rng(load_checkpoint(tmp_path / "rng.ckpt").rng)
    assert torch.equal(torch.rand(3), _expected[0])
    np.testing.assert_array_equal(np.random.rand(3), _expected[1])
    assert random.random() == _expected[2]

    logger.info("Done: RNG state round trip.\n")


@pytest.mark.parametrize("keep", [0.0, 0.5, 0.9, 0.999])
def test_truncated_checkpoint(tmp_path: Path, lip_checkpoint: Checkpoint, keep: float):
    logger.info(f"Testing truncated checkpoint (keep {keep:.1%})...")

    _path = tmp_path / "lip.ckpt"
    save_checkpoint(lip_checkpoint, _path)
    _raw = _path.read_bytes()
    _path.write_bytes(_raw[: int(len(_raw) * keep)])

    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(_path)

    logger.info("Done: Truncated checkpoint.\n")


def test_corrupted_checkpoint(tmp_path: Path, lip_checkpoint: Checkpoint):
    logger.info("Testing corrupted and foreign checkpoint files...")

    _path = tmp_path / "lip.ckpt"
    save_checkpoint(lip_checkpoint, _path)
    _raw = bytearray(_path.read_bytes())
    _raw[-10] ^= 0xFF
    _path.write_bytes(bytes(_raw))
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(_path)

    _path.write_bytes(_path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(_path)

    (tmp_path / "foreign.ckpt").write_bytes(b"PK\x03\x04 not a checkpoint")
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(tmp_path / "foreign.ckpt")

    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")

    logger.info("Done: Corrupted checkpoint files.\n")


def test_version_mismatch(tmp_path: Path):
    logger.info("Testing checkpoint schema version mismatch...")

    _path = tmp_path / "old.ckpt"
    save_checkpoint(Checkpoint(stage=StageEnum.JOINT, schema_version=99), _path)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(_path)

    logger.info("Done: Checkpoint schema version mismatch.\n")


def test_apply_reports_missing_modules(tmp_path: Path, lip_checkpoint: Checkpoint, tiny_config):
    logger.info("Testing 'apply_checkpoint' with a partial checkpoint...")

    save_checkpoint(lip_checkpoint, tmp_path / "lip.ckpt")
    _loaded = load_checkpoint(tmp_path / "lip.ckpt")

    torch.manual_seed(6)
    _modules = build_modules(tiny_config)
    _generator_before = snapshot(_modules["generator"])
    _missing = apply_checkpoint(_loaded, _modules)

    assert _missing == ["face", "prosody", "generator", "mpd", "msd"]
    _assert_state_equal(snapshot(_modules["lip"]), lip_checkpoint.modules["lip"])
    _assert_state_equal(snapshot(_modules["generator"]), _generator_before)

    logger.info("Done: 'apply_checkpoint' with a partial checkpoint.\n")


def test_apply_rejects_mismatch(lip_checkpoint: Checkpoint, tiny_config):
    logger.info("Testing 'apply_checkpoint' rejects mismatched state...")

    from .conftest import make_config

    _wider = build_modules(make_config(model={"lip_dim": 24}), ("lip",))
    _before = snapshot(_wider["lip"])
    with pytest.raises(CheckpointError):
        apply_checkpoint(lip_checkpoint, _wider)
    _assert_state_equal(snapshot(_wider["lip"]), _before)

    _foreign = Checkpoint(stage=StageEnum.JOINT, modules={"vocoder": {}})
    with pytest.raises(CheckpointError):
        apply_checkpoint(_foreign, build_modules(tiny_config, ("lip",)))

    logger.info("Done: 'apply_checkpoint' rejects mismatched state.\n")


def test_unstorable_value(tmp_path: Path):
    logger.info("Testing checkpoint rejects unsupported payload values...")

    with pytest.raises(CheckpointError):
        save_checkpoint(Checkpoint(stage=StageEnum.JOINT, extra={"bad": object()}), tmp_path / "x.ckpt")

    logger.info("Done: Unsupported payload values.\n")
