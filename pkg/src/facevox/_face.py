# -*- coding: utf-8 -*-

## Standard libraries
from typing import Union

## Third-party libraries
import numpy as np
import torch
import torch.nn as nn

## Internal modules
from ._audio import MelSpectrogram
from ._exceptions import EmbeddingError, ShapeError
from ._schemas import AudioConfig, ModelConfig, VideoConfig


_MIN_FACE_SIZE = 16
_MIN_MEL_FRAMES = 16


class _FaceStage(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, dropout: float, slope: float):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.LeakyReLU(slope),
            nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
        )
        self.skip = (
            nn.Identity()
            if in_channels == out_channels
            else nn.Conv2d(in_channels, out_channels, kernel_size=1, bias=False)
        )
        self.post = nn.Sequential(
            nn.LeakyReLU(slope),
            nn.MaxPool2d(2),
            nn.Dropout2d(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.post(self.body(x) + self.skip(x))


class FaceEncoder(nn.Module):
    """Residual 2D CNN: 4 stages, global average pooling, linear projection to `face_dim`."""

    def __init__(self, model_cfg: ModelConfig = ModelConfig(), video_cfg: VideoConfig = VideoConfig()):
        super().__init__()
        self.channels = video_cfg.channels
        self.face_dim = model_cfg.face_dim

        _stages = []
        _in = video_cfg.channels
        for _out in model_cfg.face_channels:
            _stages.append(_FaceStage(_in, _out, model_cfg.face_dropout, model_cfg.leaky_slope))
            _in = _out
        self.stages = nn.Sequential(*_stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(_in, model_cfg.face_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.fc(self.pool(self.stages(images)).flatten(1))


class ProsodyEncoder(nn.Module):
    """Reference encoder over a log-mel: 4 stride-2 Conv2d layers, a GRU over time, linear to `face_dim`."""

    def __init__(self, model_cfg: ModelConfig = ModelConfig(), audio_cfg: AudioConfig = AudioConfig()):
        super().__init__()
        self.mel_bins = audio_cfg.mel_bins
        self.embedding_dim = model_cfg.face_dim

        _layers = []
        _in = 1
        _freq = audio_cfg.mel_bins
        for _out in model_cfg.prosody_channels:
            _layers += [
                nn.Conv2d(_in, _out, kernel_size=3, stride=2, padding=1),
                nn.BatchNorm2d(_out),
                nn.ReLU(),
            ]
            _in = _out
            _freq = (_freq - 1) // 2 + 1
        self.convs = nn.Sequential(*_layers)
        self.gru = nn.GRU(input_size=_in * _freq, hidden_size=model_cfg.prosody_hidden, batch_first=True)
        self.fc = nn.Linear(model_cfg.prosody_hidden, model_cfg.face_dim)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        _x = self.convs(mel.unsqueeze(1))
        _b, _c, _f, _t = _x.shape
        _x = _x.permute(0, 3, 1, 2).reshape(_b, _t, _c * _f)
        _, _h = self.gru(_x)
        return self.fc(_h[-1])


def select_face_index(count: int, rng: np.random.Generator) -> int:
    if count < 1:
        raise ShapeError("Can't select a face frame from an empty sequence!")

    return int(rng.integers(count))


def select_face_frame(frames: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """One frame of `frames` [K, C, H, W], drawn uniformly with `rng`."""

    return frames[select_face_index(int(frames.shape[0]), rng)]


def face_forward(face_image: torch.Tensor, encoder: FaceEncoder) -> torch.Tensor:
    """Face embedding [face_dim] for an image [C, S, S] (or [B, face_dim] for [B, C, S, S])."""

    if face_image.ndim not in (3, 4):
        raise ShapeError(f"Face image must be [C, H, W] or [B, C, H, W], got {tuple(face_image.shape)}!")

    _c, _h, _w = face_image.shape[-3:]
    if _c != encoder.channels:
        raise ShapeError(f"Face image must have {encoder.channels} channels, got {_c}!")

    if min(_h, _w) < _MIN_FACE_SIZE:
        raise ShapeError(f"Face image {_h}x{_w} is smaller than {_MIN_FACE_SIZE}x{_MIN_FACE_SIZE}!")

    _out = encoder(face_image.unsqueeze(0)).squeeze(0) if face_image.ndim == 3 else encoder(face_image)
    if bool((_out.detach().norm(dim=-1) == 0).any()):
        raise EmbeddingError("Face embedding has zero norm!")

    return _out


def prosody_forward(mel: Union[MelSpectrogram, torch.Tensor], encoder: ProsodyEncoder) -> torch.Tensor:
    """Prosody embedding [face_dim] for a log-mel [mel_bins, T_m] (T_m >= 16); batched input allowed."""

    _mel = torch.from_numpy(mel.values) if isinstance(mel, MelSpectrogram) else mel
    if _mel.ndim not in (2, 3) or _mel.shape[-2] != encoder.mel_bins:
        raise ShapeError(
            f"Mel must be [{encoder.mel_bins}, T] or [B, {encoder.mel_bins}, T], got {tuple(_mel.shape)}!"
        )

    if _mel.shape[-1] < _MIN_MEL_FRAMES:
        raise ShapeError(f"Mel has {_mel.shape[-1]} frames, the prosody encoder needs >= {_MIN_MEL_FRAMES}!")

    if _mel.ndim == 2:
        return encoder(_mel.unsqueeze(0)).squeeze(0)

    return encoder(_mel)


def cs_loss(f: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """`1 - cos(f, p)` in [0, 2]; batched [B, D] inputs are averaged over B.

    Raises:
        EmbeddingError: If any vector has zero norm.
    """

    if f.shape != p.shape:
        raise ShapeError(f"Embedding shapes differ: {tuple(f.shape)} vs {tuple(p.shape)}!")

    _f_norm = f.norm(dim=-1)
    _p_norm = p.norm(dim=-1)
    if bool((_f_norm == 0).any()) or bool((_p_norm == 0).any()):
        raise EmbeddingError("Cosine similarity is undefined for a zero embedding!")

    _cos = (f * p).sum(dim=-1) / (_f_norm * _p_norm)
    return (1.0 - _cos.clamp(-1.0, 1.0)).mean()


__all__ = [
    "FaceEncoder",
    "ProsodyEncoder",
    "select_face_index",
    "select_face_frame",
    "face_forward",
    "prosody_forward",
    "cs_loss",
]
