# -*- coding: utf-8 -*-

## Standard libraries
import itertools
from typing import List, Optional, Sequence, Union

## Third-party libraries
import torch
import torch.nn as nn
import torch.nn.functional as F

## Internal modules
from ._consts import BLANK_ID, VOCAB_SIZE
from ._exceptions import ShapeError, TranscriptError
from ._schemas import ModelConfig, VideoConfig
from ._text import GraphemeIds, decode_graphemes


class ResidualBlock3d(nn.Module):
    """Bottleneck `x + scale * F(x)` with two (3, 3, 3) convolutions, channels C -> bottleneck -> C."""

    def __init__(self, channels: int, bottleneck: int, scale: float = 0.2, slope: float = 0.1):
        super().__init__()
        self.scale = scale
        self.body = nn.Sequential(
            nn.Conv3d(channels, bottleneck, kernel_size=3, stride=1, padding=1),
            nn.BatchNorm3d(bottleneck),
            nn.LeakyReLU(slope),
            nn.Conv3d(bottleneck, channels, kernel_size=3, stride=1, padding=1),
            nn.BatchNorm3d(channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.scale * self.body(x)


class LipEncoder(nn.Module):
    """3D CNN front-end, residual bottleneck, 2-layer BiGRU and two linear heads.

    All temporal strides are 1, so frame count is preserved: [B, T, C, H, W] -> [B, T, lip_dim].
    `head` maps embeddings to grapheme logits for CTC.
    """

    def __init__(self, model_cfg: ModelConfig = ModelConfig(), video_cfg: VideoConfig = VideoConfig()):
        super().__init__()
        self.height = video_cfg.lip_height
        self.width = video_cfg.lip_width
        self.channels = video_cfg.channels
        self.lip_dim = model_cfg.lip_dim

        _stages = []
        _in = video_cfg.channels
        for _out in model_cfg.conv_channels:
            _stages += [
                nn.Conv3d(_in, _out, kernel_size=3, stride=1, padding=1),
                nn.BatchNorm3d(_out),
                nn.LeakyReLU(model_cfg.leaky_slope),
                nn.MaxPool3d(kernel_size=(1, 2, 2), stride=(1, 2, 2)),
            ]
            _in = _out
        self.frontend = nn.Sequential(*_stages)
        self.residual = ResidualBlock3d(
            _in, model_cfg.bottleneck_channels, model_cfg.residual_scale, model_cfg.leaky_slope
        )
        self.dropout = nn.Dropout3d(model_cfg.dropout)
        self.pool = nn.AdaptiveAvgPool3d((None, 3, 3))
        self.gru = nn.GRU(
            input_size=_in * 9,
            hidden_size=model_cfg.gru_hidden,
            num_layers=2,
            batch_first=True,
            bidirectional=True,
        )
        self.fc = nn.Linear(2 * model_cfg.gru_hidden, model_cfg.lip_dim)
        self.head = nn.Linear(model_cfg.lip_dim, VOCAB_SIZE)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        _b, _t = frames.shape[:2]
        _x = frames.permute(0, 2, 1, 3, 4)
        _x = self.frontend(_x)
        _x = self.dropout(self.residual(_x))
        _x = self.pool(_x)
        _x = _x.permute(0, 2, 1, 3, 4).reshape(_b, _t, -1)
        _x, _ = self.gru(_x)
        return self.fc(_x)


def _check_lip_frames(frames: torch.Tensor, encoder: LipEncoder) -> None:
    if frames.ndim not in (4, 5):
        raise ShapeError(f"Lip frames must be [T, C, H, W] or [B, T, C, H, W], got {tuple(frames.shape)}!")

    _c, _h, _w = frames.shape[-3:]
    if (_h, _w) != (encoder.height, encoder.width):
        raise ShapeError(
            f"Lip frames must be {encoder.height}x{encoder.width}, got {_h}x{_w}!"
        )

    if _c != encoder.channels:
        raise ShapeError(f"Lip frames must have {encoder.channels} channels, got {_c}!")

    if frames.shape[-4] < 1:
        raise ShapeError("Lip frame sequence is empty!")


def lip_forward(lip_frames: torch.Tensor, encoder: LipEncoder) -> torch.Tensor:
    """Per-frame lip embeddings.

    Args:
        lip_frames (torch.Tensor, required): [T, C, 144, 144] or batched [B, T, C, 144, 144].
        encoder    (LipEncoder  , required): Lip encoder; call `.eval()` for deterministic output.

    Raises:
        ShapeError: If the frame size or channel count doesn't match the encoder.

    Returns:
        torch.Tensor: [T, lip_dim] (or [B, T, lip_dim]).
    """

    _check_lip_frames(lip_frames, encoder)
    if lip_frames.ndim == 4:
        return encoder(lip_frames.unsqueeze(0)).squeeze(0)

    return encoder(lip_frames)


def ctc_logits(embeddings: torch.Tensor, encoder: LipEncoder) -> torch.Tensor:
    if embeddings.shape[-1] != encoder.lip_dim:
        raise ShapeError(
            f"Embedding dim {embeddings.shape[-1]} doesn't match the lip encoder ({encoder.lip_dim})!"
        )

    return encoder.head(embeddings)


def required_frames(target: Sequence[int]) -> int:
    """Minimum frames a CTC alignment of `target` needs: one per label plus a blank between repeats."""

    _ids = list(target)
    return len(_ids) + sum(1 for _a, _b in zip(_ids, _ids[1:]) if _a == _b)


def _as_id_tensor(targets: Union[GraphemeIds, Sequence[int], torch.Tensor]) -> torch.Tensor:
    if isinstance(targets, GraphemeIds):
        targets = targets.ids

    return torch.as_tensor(list(targets) if not torch.is_tensor(targets) else targets, dtype=torch.long)


def ctc_loss(
    logits: torch.Tensor,
    targets: Union[GraphemeIds, Sequence[int], torch.Tensor],
    target_lengths: Optional[torch.Tensor] = None,
    reduction: str = "sum",
) -> torch.Tensor:
    """Negative log-likelihood of `targets` under CTC with blank id 0.

    Args:
        logits         (torch.Tensor, required): Pre-softmax [T, V], or [B, T, V] with concatenated targets.
        targets        (GraphemeIds , required): Target ids (never blank). Concatenated when batched.
        target_lengths (torch.Tensor, optional): Per-item target lengths when `logits` is batched.
        reduction      (str         , optional): "sum" over items, or "mean" over items. Defaults to "sum".

    Raises:
        TranscriptError: If a target is empty, holds the blank id or needs more frames than T.

    Returns:
        torch.Tensor: Scalar loss >= 0.
    """

    _targets = _as_id_tensor(targets)
    _batched = logits.ndim == 3
    _logits = logits if _batched else logits.unsqueeze(0)
    _b, _t, _v = _logits.shape
    if target_lengths is None:
        if _batched and (_b != 1):
            raise ShapeError("target_lengths is required for batched logits!")
        target_lengths = torch.tensor([_targets.numel()], dtype=torch.long)

    target_lengths = torch.as_tensor(target_lengths, dtype=torch.long)
    if (target_lengths.numel() != _b) or (int(target_lengths.sum()) != _targets.numel()):
        raise ShapeError(
            f"target_lengths {target_lengths.tolist()} don't match {_b} items and {_targets.numel()} target ids!"
        )

    if (_targets == BLANK_ID).any() or (_targets >= _v).any() or (_targets < 0).any():
        raise TranscriptError(f"CTC targets must be in [1, {_v - 1}]!")

    _offset = 0
    for _length in target_lengths.tolist():
        _item = _targets[_offset : _offset + _length].tolist()
        _offset += _length
        if _length < 1:
            raise TranscriptError("CTC target is empty!")

        _needed = required_frames(_item)
        if _needed > _t:
            raise TranscriptError(
                f"CTC target of length {_length} needs {_needed} frames but only {_t} are available!"
            )

    _log_probs = F.log_softmax(_logits, dim=-1).transpose(0, 1)
    _input_lengths = torch.full((_b,), _t, dtype=torch.long)
    _loss = F.ctc_loss(
        _log_probs,
        _targets,
        _input_lengths,
        target_lengths,
        blank=BLANK_ID,
        reduction="sum",
        zero_infinity=False,
    )
    if reduction == "mean":
        return _loss / _b

    return _loss


def collapse_path(path: Sequence[int]) -> List[int]:
    """CTC collapse: merge repeats, then drop blanks."""

    return [int(_id) for _id, _ in itertools.groupby(path) if int(_id) != BLANK_ID]


def greedy_decode(logits: torch.Tensor) -> Union[str, List[str]]:
    """Best-path decoding of [T, V] (returns str) or [B, T, V] (returns a list)."""

    if logits.ndim == 3:
        return [greedy_decode(_item) for _item in logits]

    _path = logits.argmax(dim=-1).tolist()
    return decode_graphemes(collapse_path(_path))


__all__ = [
    "ResidualBlock3d",
    "LipEncoder",
    "lip_forward",
    "ctc_logits",
    "required_frames",
    "ctc_loss",
    "collapse_path",
    "greedy_decode",
]
