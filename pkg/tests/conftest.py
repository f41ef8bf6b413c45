# -*- coding: utf-8 -*-

import logging
from pathlib import Path
from typing import Any, Dict

import pytest
import torch

try:
    from facevox import FacevoxConfig, CorpusManifest, generate_toy_corpus
except ImportError:
    from src.facevox import FacevoxConfig, CorpusManifest, generate_toy_corpus


logger = logging.getLogger(__name__)


TINY_CONFIG: Dict[str, Any] = {
    "audio": {
        "sample_rate": 16000,
        "utterance_seconds": 0.5,
        "hop": 160,
        "win": 640,
        "fft_size": 640,
    },
    "video": {"frames_per_utterance": 25},
    "corpus": {
        "n_speakers": 3,
        "utterances_per_speaker": 4,
        "seed": 7,
        "face_size": 32,
        "split_ratios": (0.5, 0.25, 0.25),
    },
    "model": {
        "lip_dim": 16,
        "face_dim": 16,
        "gru_hidden": 16,
        "conv_channels": (4, 8, 8),
        "bottleneck_channels": 4,
        "dropout": 0.0,
        "face_channels": (4, 8, 8, 8),
        "face_dropout": 0.0,
        "prosody_channels": (4, 4, 8, 8),
        "prosody_hidden": 16,
        "initial_channel": 32,
        "upsample_rates": (1, 1, 2),
        "upsample_kernels": (4, 4, 4),
        "resblock_kernels": (3, 5),
        "resblock_dilations": ((1, 3), (1, 3)),
        "mpd_periods": (2, 3),
        "msd_channels": (80, 16, 16, 16),
    },
    "train": {
        "batch_size": 2,
        "max_steps": 3,
        "patience": 2,
        "seed": 11,
        "log_every": 1,
        "checkpoint_every": 1000,
    },
    "prosody": {"max_steps": 3, "batch_size": 2, "seed": 5},
    "infer": {"griffin_lim_iters": 4},
    "eval": {"ablation_steps": 3, "perplexity": 2.0},
}


@pytest.fixture(scope="session", autouse=True)
def setup_and_teardown():
    # Equivalent of setUp
    logger.info("Setting up...")
    torch.set_num_threads(1)

    yield  # This is where the testing happens!

    # Equivalent of tearDown
    logger.info("Tearing down!")


def make_config(**sections: Dict[str, Any]) -> FacevoxConfig:
    """Tiny config with per-section overrides merged on top."""

    _data = {_k: dict(_v) for _k, _v in TINY_CONFIG.items()}
    for _name, _values in sections.items():
        if isinstance(_values, dict):
            _data.setdefault(_name, {}).update(_values)
        else:
            _data[_name] = _values
    return FacevoxConfig(**_data)


@pytest.fixture(scope="session")
def tiny_config() -> FacevoxConfig:
    return make_config()


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory: pytest.TempPathFactory, tiny_config: FacevoxConfig) -> CorpusManifest:
    _root: Path = tmp_path_factory.mktemp("corpus") / "toy"
    _corpus = tiny_config.corpus
    _manifest = generate_toy_corpus(
        root=_root,
        n_speakers=_corpus.n_speakers,
        utterances_per_speaker=_corpus.utterances_per_speaker,
        seed=_corpus.seed,
        audio_cfg=tiny_config.audio,
        video_cfg=tiny_config.video,
        face_size=_corpus.face_size,
        split_ratios=_corpus.split_ratios,
    )

    yield _manifest

    del _manifest
