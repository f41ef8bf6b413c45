# -*- coding: utf-8 -*-

import csv
import logging
from pathlib import Path
from typing import Dict

import pytest
import torch

try:
    from facevox import (
        Checkpoint,
        CorpusManifest,
        StageEnum,
        SplitEnum,
        CheckpointError,
        DegenerateTaskError,
        DivergenceError,
        pretrain_prosody,
        pretrain_lip,
        pretrain_face,
        train_joint,
        load_checkpoint,
    )
    from facevox._train import build_modules, snapshot, epoch_batches, iterate_steps
    from facevox._corpus import UtteranceDataset
except ImportError:
    from src.facevox import (
        Checkpoint,
        CorpusManifest,
        StageEnum,
        SplitEnum,
        CheckpointError,
        DegenerateTaskError,
        DivergenceError,
        pretrain_prosody,
        pretrain_lip,
        pretrain_face,
        train_joint,
        load_checkpoint,
    )
    from src.facevox._train import build_modules, snapshot, epoch_batches, iterate_steps
    from src.facevox._corpus import UtteranceDataset

from .conftest import make_config


logger = logging.getLogger(__name__)


def _same_state(a: Dict[str, torch.Tensor], b: Dict[str, torch.Tensor]) -> bool:
    return (set(a) == set(b)) and all(torch.equal(a[_k], b[_k]) for _k in a)


@pytest.fixture(scope="module")
def stages(tmp_path_factory: pytest.TempPathFactory, toy_manifest: CorpusManifest, tiny_config):
    _output_dir = str(tmp_path_factory.mktemp("stages"))
    _prosody = pretrain_prosody(toy_manifest, tiny_config, output_dir=_output_dir)
    _lip = pretrain_lip(toy_manifest, tiny_config, output_dir=_output_dir)
    _face = pretrain_face(toy_manifest, tiny_config, _prosody, output_dir=_output_dir)

    yield {"prosody": _prosody, "lip": _lip, "face": _face, "output_dir": _output_dir}


def test_epoch_batches_and_steps(toy_manifest: CorpusManifest):
    logger.info("Testing 'epoch_batches' and 'iterate_steps'...")

    _batches = epoch_batches(7, 3, seed=2, epoch=1)
    assert [len(_b) for _b in _batches] == [3, 3, 1]
    assert sorted(_i for _b in _batches for _i in _b) == list(range(7))
    assert _batches == epoch_batches(7, 3, seed=2, epoch=1)
    assert _batches != epoch_batches(7, 3, seed=2, epoch=2)

    _dataset = UtteranceDataset(toy_manifest, SplitEnum.TRAIN)
    _steps = [(_s, _e, _end) for _s, _e, _, _end in iterate_steps(_dataset, 4, seed=0, max_steps=5)]
    assert _steps == [(1, 0, False), (2, 0, True), (3, 1, False), (4, 1, True), (5, 2, False)]
    _resumed = [(_s, _e, _end) for _s, _e, _, _end in iterate_steps(_dataset, 4, seed=0, max_steps=5, start_step=3)]
    assert _resumed == _steps[3:]

    logger.info("Done: 'epoch_batches' and 'iterate_steps'.\n")


def test_pretrain_prosody(stages, tiny_config):
    logger.info("Testing 'pretrain_prosody' checkpoint...")

    _checkpoint: Checkpoint = stages["prosody"]
    assert _checkpoint.stage == StageEnum.PRETRAIN_PROSODY
    assert _checkpoint.step == tiny_config.prosody.max_steps
    assert set(_checkpoint.modules) == {"prosody"}
    assert _checkpoint.extra["speakers"] == ["s1", "s2", "s3"]
    _accuracy = _checkpoint.extra["val_accuracy"]
    assert (_accuracy is None) or (0.0 <= _accuracy <= 1.0)

    _rows = list(csv.DictReader(open(Path(stages["output_dir"]) / "metrics" / "pretrain_prosody.csv")))
    assert len(_rows) == tiny_config.prosody.max_steps

    logger.info("Done: 'pretrain_prosody' checkpoint.\n")


def test_pretrain_prosody_needs_two_speakers(toy_manifest: CorpusManifest, tiny_config):
    logger.info("Testing 'pretrain_prosody' on a single speaker...")

    _single = toy_manifest.model_copy(
        update={"entries": [_e for _e in toy_manifest.entries if _e.speaker_id == "s1"]}
    )
    with pytest.raises(DegenerateTaskError):
        pretrain_prosody(_single, tiny_config)

    logger.info("Done: 'pretrain_prosody' on a single speaker.\n")


def test_pretrain_lip(stages, tiny_config):
    logger.info("Testing 'pretrain_lip' checkpoint...")

    _checkpoint: Checkpoint = stages["lip"]
    assert _checkpoint.stage == StageEnum.PRETRAIN_LIP
    assert set(_checkpoint.modules) == {"lip"}
    assert _checkpoint.extra["val_cer"] is not None and _checkpoint.extra["val_cer"] >= 0.0

    _loaded = load_checkpoint(Path(stages["output_dir"]) / "checkpoints" / "pretrain_lip.ckpt")
    assert _loaded.module_hashes() == _checkpoint.module_hashes()

    logger.info("Done: 'pretrain_lip' checkpoint.\n")


def test_zero_steps_leave_parameters(toy_manifest: CorpusManifest):
    logger.info("Testing a zero-step stage leaves parameters unchanged...")

    _config = make_config(train={"max_steps": 0})
    torch.manual_seed(8)
    _modules = build_modules(_config, ("lip",))
    _before = snapshot(_modules["lip"])

    _checkpoint = pretrain_lip(toy_manifest, _config, modules=_modules)
    assert _checkpoint.step == 0
    assert _same_state(_checkpoint.modules["lip"], _before)

    logger.info("Done: Zero-step stage.\n")


def test_stage_determinism(toy_manifest: CorpusManifest, tiny_config, stages):
    logger.info("Testing identical runs give identical parameters...")

    _again = pretrain_lip(toy_manifest, tiny_config)
    assert _again.module_hashes() == stages["lip"].module_hashes()

    _face = pretrain_face(toy_manifest, tiny_config, stages["prosody"])
    assert _face.module_hashes() == stages["face"].module_hashes()

    logger.info("Done: Stage determinism.\n")


def test_pretrain_face_keeps_prosody_frozen(toy_manifest: CorpusManifest, tiny_config, stages):
    logger.info("Testing 'pretrain_face' leaves the prosody encoder untouched...")

    _face: Checkpoint = stages["face"]
    assert set(_face.modules) == {"face", "prosody"}
    assert _same_state(_face.modules["prosody"], stages["prosody"].modules["prosody"])
    assert _face.extra["epochs"] == len(_face.extra["history"])

    with pytest.raises(CheckpointError):
        pretrain_face(toy_manifest, tiny_config, stages["lip"])

    logger.info("Done: 'pretrain_face' prosody isolation.\n")


def test_pretrain_face_stopping_rule(toy_manifest: CorpusManifest, stages):
    logger.info("Testing 'pretrain_face' patience-based stopping...")

    _config = make_config(train={"max_steps": 15, "patience": 1})
    _checkpoint = pretrain_face(toy_manifest, _config, stages["prosody"])
    _history = _checkpoint.extra["history"]

    assert _checkpoint.extra["epochs"] == len(_history)
    assert _checkpoint.extra["best_val_cs"] == min(_history)
    assert _checkpoint.step == 3 * len(_history)
    if _checkpoint.extra["stopped_early"]:
        assert _history[-1] >= min(_history[:-1])
    else:
        assert len(_history) == 5
        assert all(_b < _a for _a, _b in zip(_history, _history[1:]))

    logger.info("Done: 'pretrain_face' stopping rule.\n")


def test_joint_stage_isolation(tmp_path: Path, toy_manifest: CorpusManifest, tiny_config, stages):
    logger.info("Testing 'train_joint' only updates trainable modules...")

    _checkpoint = train_joint(
        toy_manifest, tiny_config, stages["lip"], stages["face"], output_dir=str(tmp_path)
    )

    assert _checkpoint.stage == StageEnum.JOINT
    assert _checkpoint.step == tiny_config.train.max_steps
    assert set(_checkpoint.modules) == {"lip", "face", "prosody", "generator", "mpd", "msd"}
    assert _same_state(_checkpoint.modules["lip"], stages["lip"].modules["lip"])
    assert _same_state(_checkpoint.modules["prosody"], stages["face"].modules["prosody"])
    assert not _same_state(_checkpoint.modules["face"], stages["face"].modules["face"])
    assert _checkpoint.extra["missing_modules"] == ["generator", "mpd", "msd"]

    _frozen_face = train_joint(
        toy_manifest, make_config(train={"freeze_face": True}), stages["lip"], stages["face"]
    )
    assert _same_state(_frozen_face.modules["face"], stages["face"].modules["face"])

    logger.info("Done: 'train_joint' stage isolation.\n")


def test_joint_metrics_are_additive(tmp_path: Path, toy_manifest: CorpusManifest, tiny_config, stages):
    logger.info("Testing joint metrics CSV totals...")

    train_joint(toy_manifest, tiny_config, stages["lip"], stages["face"], output_dir=str(tmp_path))
    with open(tmp_path / "metrics" / "joint.csv", newline="") as _file:
        _rows = list(csv.DictReader(_file))

    assert [int(_r["step"]) for _r in _rows] == list(range(1, tiny_config.train.max_steps + 1))
    for _row in _rows:
        _parts = [float(_row[_k]) for _k in ("adv_gen", "adv_disc", "feature_match", "mel_l1", "cs", "vocoder")]
        assert float(_row["total"]) == pytest.approx(sum(_parts), rel=1e-9, abs=1e-12)
        assert float(_row["vocoder"]) == 0.0
    # epoch ends (3 steps of 2 out of 6 train utterances) carry a validation value
    assert _rows[-1]["val_mel_l1"] != ""

    logger.info("Done: Joint metrics CSV totals.\n")


def test_joint_resume_equivalence(tmp_path: Path, toy_manifest: CorpusManifest, stages):
    logger.info("Testing resumed joint training matches an uninterrupted run...")

    _full = train_joint(toy_manifest, make_config(train={"max_steps": 4}), stages["lip"], stages["face"])

    _first = train_joint(
        toy_manifest, make_config(train={"max_steps": 2}), stages["lip"], stages["face"], output_dir=str(tmp_path)
    )
    _saved = load_checkpoint(tmp_path / "checkpoints" / "joint.ckpt")
    assert _saved.module_hashes() == _first.module_hashes()
    _resumed = train_joint(toy_manifest, make_config(train={"max_steps": 4}), resume=_saved)

    assert _resumed.step == 4
    assert _resumed.module_hashes() == _full.module_hashes()

    with pytest.raises(CheckpointError):
        train_joint(toy_manifest, make_config(train={"max_steps": 4}), resume=stages["lip"])

    logger.info("Done: Resume equivalence.\n")


def test_joint_early_stopping(toy_manifest: CorpusManifest, stages):
    logger.info("Testing 'train_joint' patience on the validation mel L1...")

    _config = make_config(train={"max_steps": 12, "patience": 1})
    _plain = train_joint(toy_manifest, _config, stages["lip"], stages["face"])
    assert _plain.step == 12
    assert _plain.extra["stopped_early"] is False
    assert len(_plain.extra["history"]) == 4
    assert _plain.extra["best_val_mel_l1"] == min(_plain.extra["history"])

    _config = make_config(train={"max_steps": 30, "patience": 1, "joint_early_stop": True})
    _checkpoint = train_joint(toy_manifest, _config, stages["lip"], stages["face"])
    _history = _checkpoint.extra["history"]

    assert _checkpoint.step == 3 * len(_history)
    assert _checkpoint.extra["best_val_mel_l1"] == min(_history)
    if _checkpoint.extra["stopped_early"]:
        assert _checkpoint.step < 30
        assert _history[-1] >= min(_history[:-1])
    else:
        assert len(_history) == 10
        assert all(_b < _a for _a, _b in zip(_history, _history[1:]))

    logger.info("Done: 'train_joint' patience on the validation mel L1.\n")


def test_joint_requires_pretraining(toy_manifest: CorpusManifest, tiny_config, stages):
    logger.info("Testing 'train_joint' without pretraining checkpoints...")

    with pytest.raises(CheckpointError):
        train_joint(toy_manifest, tiny_config)
    with pytest.raises(CheckpointError):
        train_joint(toy_manifest, tiny_config, lip_checkpoint=stages["lip"])

    logger.info("Done: 'train_joint' without pretraining checkpoints.\n")


def test_joint_divergence(toy_manifest: CorpusManifest, tiny_config):
    logger.info("Testing 'train_joint' stops on a non-finite loss...")

    torch.manual_seed(0)
    _modules = build_modules(tiny_config)
    with torch.no_grad():
        _modules["generator"].output_conv.bias.fill_(float("nan"))

    with pytest.raises(DivergenceError) as _info:
        train_joint(toy_manifest, tiny_config, modules=_modules)

    assert _info.value.term == "adv_disc"
    assert _info.value.step == 1

    logger.info("Done: 'train_joint' divergence.\n")


@pytest.mark.slow
def test_joint_overfits_fixed_batch(tmp_path: Path, toy_manifest: CorpusManifest, stages):
    logger.info("Testing joint training drives the mel loss down on a fixed batch...")

    _config = make_config(train={"max_steps": 500, "optimizer": {"lr": 2e-3}})
    train_joint(
        toy_manifest, _config, stages["lip"], stages["face"], output_dir=str(tmp_path), batch_indices=[0, 1]
    )
    with open(tmp_path / "metrics" / "joint.csv", newline="") as _file:
        _mel = [float(_r["mel_l1"]) for _r in csv.DictReader(_file)]

    assert sum(_mel[-10:]) / 10 < 0.5 * sum(_mel[:10]) / 10

    logger.info("Done: Fixed-batch overfit.\n")
