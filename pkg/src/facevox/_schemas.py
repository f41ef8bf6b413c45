# -*- coding: utf-8 -*-

## Standard libraries
import math
from typing import Tuple, Type, Literal

## Third-party libraries
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_settings import (
    BaseSettings,
    SettingsConfigDict,
    PydanticBaseSettingsSource,
)

## Internal modules
from ._consts import (
    ENV_PREFIX,
    CONFIG_SCHEMA_VERSION,
    StageEnum,
    SplitEnum,
    FaceFramesEnum,
)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AudioConfig(_Section):
    sample_rate: int = Field(16000, gt=0)
    utterance_seconds: float = Field(3.0, gt=0)
    mel_bins: int = Field(80, gt=0)
    hop: int = Field(320, gt=0)
    win: int = Field(1280, gt=0)
    fft_size: int = Field(1280, gt=0)
    mel_floor: float = Field(1e-5, gt=0)
    fmin: float = Field(0.0, ge=0)
    fmax: float = Field(8000.0, gt=0)

    @model_validator(mode="after")
    def _check_framing(self) -> "AudioConfig":
        _samples = self.sample_rate * self.utterance_seconds
        if not math.isclose(_samples, round(_samples)):
            raise ValueError(
                f"sample_rate x utterance_seconds = {_samples} is not a whole number of samples!"
            )

        if round(_samples) % self.hop != 0:
            raise ValueError(
                f"sample_rate x utterance_seconds ({round(_samples)}) must be divisible by hop ({self.hop})!"
            )

        if self.fft_size < self.win:
            raise ValueError(f"fft_size ({self.fft_size}) must be >= win ({self.win})!")

        if self.fmax > self.sample_rate / 2:
            raise ValueError(f"fmax ({self.fmax}) is above Nyquist ({self.sample_rate / 2})!")

        return self

    @property
    def num_samples(self) -> int:
        return int(round(self.sample_rate * self.utterance_seconds))

    @property
    def mel_frames(self) -> int:
        return self.num_samples // self.hop


class VideoConfig(_Section):
    frames_per_utterance: int = Field(75, gt=0)
    lip_height: Literal[144] = 144
    lip_width: Literal[144] = 144
    channels: int = Field(3, gt=0)


class CorpusConfig(_Section):
    root: str = "./corpus"
    n_speakers: int = Field(8, ge=2)
    utterances_per_speaker: int = Field(20, ge=4)
    seed: int = 1
    face_size: int = Field(128, ge=16)
    split_ratios: Tuple[float, float, float] = (0.9, 0.05, 0.05)
    unseen_speakers: int = Field(0, ge=0)
    force: bool = False

    @model_validator(mode="after")
    def _check_splits(self) -> "CorpusConfig":
        if (not math.isclose(sum(self.split_ratios), 1.0)) or any(
            _ratio < 0 for _ratio in self.split_ratios
        ):
            raise ValueError(f"split_ratios {self.split_ratios} must be >= 0 and sum to 1!")

        if self.unseen_speakers > self.n_speakers - 2:
            raise ValueError(
                f"unseen_speakers ({self.unseen_speakers}) must leave at least 2 seen speakers!"
            )

        return self


class ModelConfig(_Section):
    lip_dim: int = Field(256, gt=0)
    face_dim: int = Field(256, gt=0)
    gru_hidden: int = Field(256, gt=0)
    conv_channels: Tuple[int, int, int] = (32, 64, 96)
    bottleneck_channels: int = Field(32, gt=0)
    dropout: float = Field(0.3, ge=0, lt=1)
    residual_scale: float = 0.2
    face_channels: Tuple[int, int, int, int] = (32, 64, 128, 256)
    face_dropout: float = Field(0.1, ge=0, lt=1)
    prosody_channels: Tuple[int, int, int, int] = (32, 32, 64, 64)
    prosody_hidden: int = Field(128, gt=0)
    initial_channel: int = Field(640, gt=0)
    upsample_rates: Tuple[int, ...] = (1, 1, 2)
    upsample_kernels: Tuple[int, ...] = (16, 16, 4)
    resblock_kernels: Tuple[int, ...] = (3, 7, 11)
    resblock_dilations: Tuple[Tuple[int, ...], ...] = ((1, 3, 5), (1, 3, 5), (1, 3, 5))
    mpd_periods: Tuple[int, ...] = (2, 3, 5)
    msd_channels: Tuple[int, ...] = (80, 160, 240, 480, 960, 960)
    leaky_slope: float = 0.1

    @model_validator(mode="after")
    def _check_generator(self) -> "ModelConfig":
        if len(self.upsample_rates) != len(self.upsample_kernels):
            raise ValueError("upsample_rates and upsample_kernels must have the same length!")

        if len(self.resblock_kernels) != len(self.resblock_dilations):
            raise ValueError("resblock_kernels and resblock_dilations must have the same length!")

        if self.initial_channel // (2 ** len(self.upsample_rates)) < 1:
            raise ValueError("initial_channel is too small for the number of upsampling stages!")

        return self

    @property
    def upsample_factor(self) -> int:
        return math.prod(self.upsample_rates)

    @property
    def condition_dim(self) -> int:
        return self.lip_dim + self.face_dim


class OptimizerConfig(_Section):
    lr: float = Field(2e-4, gt=0)
    betas: Tuple[float, float] = (0.8, 0.99)
    weight_decay: float = Field(0.0, ge=0)
    lr_decay: float = Field(0.999, gt=0, le=1)


class LossWeights(_Section):
    fm: float = Field(2.0, ge=0)
    mel: float = Field(45.0, ge=0)
    cs: float = Field(1.0, ge=0)
    vocoder: float = Field(0.0, ge=0)


class TrainConfig(_Section):
    stage: StageEnum = StageEnum.JOINT
    optimizer: OptimizerConfig = OptimizerConfig()
    batch_size: int = Field(8, gt=0)
    max_steps: int = Field(1000, ge=0)
    patience: int = Field(10, ge=1)
    joint_early_stop: bool = False
    seed: int = 1234
    loss_weights: LossWeights = LossWeights()
    finetune_lip: bool = False
    freeze_face: bool = False
    num_workers: int = Field(0, ge=0)
    deterministic: bool = True
    log_every: int = Field(10, ge=1)
    checkpoint_every: int = Field(500, ge=1)
    device: str = "cpu"


class ProsodyPretrainConfig(_Section):
    max_steps: int = Field(2000, ge=0)
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(16, gt=0)
    seed: int = 4321


class InferenceConfig(_Section):
    griffin_lim_iters: int = Field(60, ge=1)
    halve_i2i: bool = False
    pool_split: SplitEnum = SplitEnum.TRAIN
    pool_seed: int = 0
    face_frames: FaceFramesEnum = FaceFramesEnum.SINGLE


class EvalConfig(_Section):
    split: SplitEnum = SplitEnum.TEST
    projection_seed: int = 0
    perplexity: float = Field(10.0, gt=0)
    ablation_steps: int = Field(300, ge=0)


class BaseConfig(BaseSettings):
    """Settings base: frozen, unknown keys rejected, config files win over environment."""

    model_config = SettingsConfigDict(
        extra="forbid",
        frozen=True,
        arbitrary_types_allowed=True,
        env_prefix=ENV_PREFIX,
        env_nested_delimiter="__",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, env_settings, dotenv_settings, file_secret_settings


class FacevoxConfig(BaseConfig):
    schema_version: Literal[CONFIG_SCHEMA_VERSION] = CONFIG_SCHEMA_VERSION
    output_dir: str = "./outputs"
    audio: AudioConfig = AudioConfig()
    video: VideoConfig = VideoConfig()
    corpus: CorpusConfig = CorpusConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    prosody: ProsodyPretrainConfig = ProsodyPretrainConfig()
    infer: InferenceConfig = InferenceConfig()
    eval: EvalConfig = EvalConfig()

    @model_validator(mode="after")
    def _check_frame_ratio(self) -> "FacevoxConfig":
        _expected = self.video.frames_per_utterance * self.model.upsample_factor
        if self.audio.mel_frames != _expected:
            raise ValueError(
                f"Mel frames per utterance ({self.audio.mel_frames}) must equal video frames "
                f"({self.video.frames_per_utterance}) x decoder upsampling ({self.model.upsample_factor})!"
            )

        if self.model.msd_channels[0] != self.audio.mel_bins:
            raise ValueError(
                f"First MSD layer size ({self.model.msd_channels[0]}) must equal mel_bins ({self.audio.mel_bins})!"
            )

        return self


__all__ = [
    "AudioConfig",
    "VideoConfig",
    "CorpusConfig",
    "ModelConfig",
    "OptimizerConfig",
    "LossWeights",
    "TrainConfig",
    "ProsodyPretrainConfig",
    "InferenceConfig",
    "EvalConfig",
    "BaseConfig",
    "FacevoxConfig",
]
