# -*- coding: utf-8 -*-

## Standard libraries
import math
import functools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

## Third-party libraries
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

## Internal modules
from ._audio import mel_filterbank
from ._exceptions import ShapeError
from ._schemas import AudioConfig, LossWeights, ModelConfig


DiscOutput = List[Tuple[torch.Tensor, List[torch.Tensor]]]

_MPD_CHANNELS = (128, 256, 256)
_MPD_STRIDES = (3, 3, 1)
_MSD_KERNELS = (15, 41, 41, 41, 5)
_MSD_STRIDES = (1, 2, 2, 4, 1)
_MSD_GROUPS = (1, 4, 16, 16, 1)


def _padding(kernel_size: int, dilation: int = 1) -> int:
    return (kernel_size * dilation - dilation) // 2


class MRFBlock(nn.Module):
    """HiFi-GAN residual block: per dilation, `x + conv(lrelu(conv_dilated(lrelu(x))))`."""

    def __init__(self, channels: int, kernel_size: int, dilations: Tuple[int, ...], slope: float = 0.1):
        super().__init__()
        self.slope = slope
        self.convs1 = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel_size, dilation=_d, padding=_padding(kernel_size, _d))
            for _d in dilations
        )
        self.convs2 = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel_size, dilation=1, padding=_padding(kernel_size))
            for _ in dilations
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for _conv1, _conv2 in zip(self.convs1, self.convs2):
            _y = _conv1(F.leaky_relu(x, self.slope))
            _y = _conv2(F.leaky_relu(_y, self.slope))
            x = x + _y
        return x


class Generator(nn.Module):
    """Condition sequence [B, condition_dim, L] -> log-mel [B, mel_bins, L * prod(upsample_rates)]."""

    def __init__(self, model_cfg: ModelConfig = ModelConfig(), audio_cfg: AudioConfig = AudioConfig()):
        super().__init__()
        self.condition_dim = model_cfg.condition_dim
        self.rates = tuple(model_cfg.upsample_rates)
        self.slope = model_cfg.leaky_slope
        self.input_conv = nn.Conv1d(model_cfg.condition_dim, model_cfg.initial_channel, 7, padding=3)

        self.upsamples = nn.ModuleList()
        self.mrfs = nn.ModuleList()
        _channels = model_cfg.initial_channel
        for _rate, _kernel in zip(model_cfg.upsample_rates, model_cfg.upsample_kernels):
            self.upsamples.append(
                nn.ConvTranspose1d(
                    _channels, _channels // 2, _kernel, stride=_rate, padding=max(0, (_kernel - _rate) // 2)
                )
            )
            _channels //= 2
            self.mrfs.append(
                nn.ModuleList(
                    MRFBlock(_channels, _k, _d, model_cfg.leaky_slope)
                    for _k, _d in zip(model_cfg.resblock_kernels, model_cfg.resblock_dilations)
                )
            )
        self.output_conv = nn.Conv1d(_channels, audio_cfg.mel_bins, 7, padding=3)

    def forward(self, condition: torch.Tensor) -> torch.Tensor:
        _length = condition.shape[-1]
        _x = self.input_conv(condition)
        for _rate, _upsample, _blocks in zip(self.rates, self.upsamples, self.mrfs):
            _length *= _rate
            _x = _upsample(F.leaky_relu(_x, self.slope))
            _x = _x[..., :_length]
            if _x.shape[-1] < _length:
                _x = F.pad(_x, (0, _length - _x.shape[-1]), mode="replicate")
            _x = sum(_block(_x) for _block in _blocks) / len(_blocks)
        return self.output_conv(F.leaky_relu(_x, self.slope))


class PeriodDiscriminator(nn.Module):
    """Reshapes a mel [B, bins, T] into [B, bins, T / period, period] and scores it with 2D convs."""

    def __init__(self, period: int, mel_bins: int, slope: float = 0.1):
        super().__init__()
        self.period = period
        self.slope = slope
        self.convs = nn.ModuleList()
        _in = mel_bins
        for _out, _stride in zip(_MPD_CHANNELS, _MPD_STRIDES):
            self.convs.append(nn.Conv2d(_in, _out, (5, 1), (_stride, 1), padding=(2, 0)))
            _in = _out
        self.output_conv = nn.Conv2d(_in, 1, (3, 1), 1, padding=(1, 0))

    def forward(self, mel: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        _b, _c, _t = mel.shape
        if _t % self.period != 0:
            _pad = self.period - (_t % self.period)
            mel = F.pad(mel, (0, _pad), mode="reflect" if _pad < _t else "replicate")
            _t += _pad
        _x = mel.view(_b, _c, _t // self.period, self.period)

        _features = []
        for _conv in self.convs:
            _x = F.leaky_relu(_conv(_x), self.slope)
            _features.append(_x)
        _x = self.output_conv(_x)
        _features.append(_x)
        return torch.flatten(_x, 1), _features


class MultiPeriodDiscriminator(nn.Module):
    def __init__(self, model_cfg: ModelConfig = ModelConfig(), audio_cfg: AudioConfig = AudioConfig()):
        super().__init__()
        self.discriminators = nn.ModuleList(
            PeriodDiscriminator(_p, audio_cfg.mel_bins, model_cfg.leaky_slope) for _p in model_cfg.mpd_periods
        )

    def forward(self, mel: torch.Tensor) -> DiscOutput:
        return [_disc(mel) for _disc in self.discriminators]


class ScaleDiscriminator(nn.Module):
    """1D conv stack treating the mel bins as channels; layer widths come from `msd_channels`."""

    def __init__(self, channels: Tuple[int, ...], slope: float = 0.1):
        super().__init__()
        self.slope = slope
        self.convs = nn.ModuleList()
        for _idx, (_in, _out) in enumerate(zip(channels[:-1], channels[1:])):
            _k = _MSD_KERNELS[min(_idx, len(_MSD_KERNELS) - 1)]
            _s = _MSD_STRIDES[min(_idx, len(_MSD_STRIDES) - 1)]
            _g = math.gcd(math.gcd(_in, _out), _MSD_GROUPS[min(_idx, len(_MSD_GROUPS) - 1)])
            self.convs.append(nn.Conv1d(_in, _out, _k, _s, groups=_g, padding=_padding(_k)))
        self.output_conv = nn.Conv1d(channels[-1], 1, 3, 1, padding=1)

    def forward(self, mel: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        _x = mel
        _features = []
        for _conv in self.convs:
            _x = F.leaky_relu(_conv(_x), self.slope)
            _features.append(_x)
        _x = self.output_conv(_x)
        _features.append(_x)
        return torch.flatten(_x, 1), _features


class MultiScaleDiscriminator(nn.Module):
    """Three scale discriminators on the mel at x1, average-pooled x2 and x4."""

    def __init__(self, model_cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.discriminators = nn.ModuleList(
            ScaleDiscriminator(tuple(model_cfg.msd_channels), model_cfg.leaky_slope) for _ in range(3)
        )
        self.pools = nn.ModuleList(
            [nn.Identity(), nn.AvgPool1d(4, 2, padding=2), nn.AvgPool1d(4, 2, padding=2)]
        )

    def forward(self, mel: torch.Tensor) -> DiscOutput:
        _outputs = []
        _x = mel
        for _pool, _disc in zip(self.pools, self.discriminators):
            _x = _pool(_x)
            _outputs.append(_disc(_x))
        return _outputs


def concat_condition(lip_seq: torch.Tensor, face_embedding: torch.Tensor) -> torch.Tensor:
    """Rows `c_k = concat(l_k, f)`: [T, D_l] + [D_f] -> [T, D_l + D_f] (batched: [B, T, D_l] + [B, D_f])."""

    if lip_seq.ndim != face_embedding.ndim + 1:
        raise ShapeError(
            f"Lip sequence {tuple(lip_seq.shape)} and face embedding {tuple(face_embedding.shape)} don't pair up!"
        )

    if (lip_seq.ndim == 3) and (lip_seq.shape[0] != face_embedding.shape[0]):
        raise ShapeError("Lip sequence and face embedding batch sizes differ!")

    _face = face_embedding.unsqueeze(-2).expand(*lip_seq.shape[:-1], face_embedding.shape[-1])
    return torch.cat([lip_seq, _face], dim=-1)


def generate_mel(condition: torch.Tensor, generator: Generator) -> torch.Tensor:
    """Log-mel [mel_bins, 2 * T] from a condition [T, condition_dim] (batched: [B, T, D] -> [B, bins, 2T])."""

    if condition.shape[-1] != generator.condition_dim:
        raise ShapeError(
            f"Condition dim {condition.shape[-1]} doesn't match the generator ({generator.condition_dim})!"
        )

    if condition.ndim == 2:
        return generator(condition.t().unsqueeze(0)).squeeze(0)

    return generator(condition.transpose(1, 2))


def _batched(mel: torch.Tensor) -> torch.Tensor:
    return mel.unsqueeze(0) if mel.ndim == 2 else mel


def mpd_forward(mel: torch.Tensor, mpd: MultiPeriodDiscriminator) -> DiscOutput:
    return mpd(_batched(mel))


def msd_forward(mel: torch.Tensor, msd: MultiScaleDiscriminator) -> DiscOutput:
    return msd(_batched(mel))


def discriminator_loss(real: DiscOutput, fake: DiscOutput) -> torch.Tensor:
    """Least-squares: real scores toward 1, fake toward 0, summed over sub-discriminators."""

    _loss = 0.0
    for (_real_score, _), (_fake_score, _) in zip(real, fake):
        _loss = _loss + torch.mean((1.0 - _real_score) ** 2) + torch.mean(_fake_score**2)
    return _loss


def generator_adv_loss(fake: DiscOutput) -> torch.Tensor:
    _loss = 0.0
    for _fake_score, _ in fake:
        _loss = _loss + torch.mean((1.0 - _fake_score) ** 2)
    return _loss


def feature_matching_loss(real: DiscOutput, fake: DiscOutput) -> torch.Tensor:
    """Mean absolute difference of every layer's activations, real side treated as constant."""

    _loss = 0.0
    for (_, _real_features), (_, _fake_features) in zip(real, fake):
        for _real, _fake in zip(_real_features, _fake_features):
            _loss = _loss + torch.mean(torch.abs(_real.detach() - _fake))
    return _loss


@functools.lru_cache(maxsize=4)
def _inverse_filterbank(
    sample_rate: int, fft_size: int, mel_bins: int, fmin: float, fmax: float
) -> np.ndarray:
    _inverse = np.linalg.pinv(mel_filterbank(sample_rate, fft_size, mel_bins, fmin, fmax)).astype(np.float32)
    _inverse.setflags(write=False)
    return _inverse


def vocoder_consistency_loss(
    fake_mel: torch.Tensor, waveform: torch.Tensor, audio_cfg: AudioConfig
) -> torch.Tensor:
    """L1 between log linear magnitudes: pseudo-inverted generated mel vs the real waveform's STFT."""

    _fake = _batched(fake_mel)
    _wav = waveform.unsqueeze(0) if waveform.ndim == 1 else waveform
    _frames = _fake.shape[-1]
    _window = torch.hann_window(audio_cfg.win, device=_wav.device, dtype=_wav.dtype)
    _stft = torch.stft(
        _wav,
        n_fft=audio_cfg.fft_size,
        hop_length=audio_cfg.hop,
        win_length=audio_cfg.win,
        window=_window,
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )
    _floor = math.sqrt(audio_cfg.mel_floor)
    _real_mag = _stft.abs()[..., :_frames].clamp(min=_floor)

    _inverse = torch.from_numpy(
        np.array(
            _inverse_filterbank(
                audio_cfg.sample_rate, audio_cfg.fft_size, audio_cfg.mel_bins, audio_cfg.fmin, audio_cfg.fmax
            )
        )
    ).to(device=_fake.device, dtype=_fake.dtype)
    _power = torch.clamp(torch.matmul(_inverse, torch.exp(_fake) - audio_cfg.mel_floor), min=0.0)
    _fake_mag = torch.sqrt(_power + audio_cfg.mel_floor).clamp(min=_floor)

    if _fake_mag.shape != _real_mag.shape:
        raise ShapeError(
            f"Generated mel ({_frames} frames) doesn't match the waveform ({_real_mag.shape[-1]} frames)!"
        )

    return torch.mean(torch.abs(torch.log(_fake_mag) - torch.log(_real_mag)))


@dataclass
class LossBundle:
    """Raw loss terms plus the weights that combine them.

    `total` is the sum of `weighted()`; `generator_objective` is `total` without the
    discriminator term (which carries no gradient to the generator path).
    """

    adv_gen: torch.Tensor
    adv_disc: torch.Tensor
    feature_match: torch.Tensor
    mel_l1: torch.Tensor
    cs: torch.Tensor
    vocoder: torch.Tensor
    weights: LossWeights = field(default_factory=LossWeights)

    def _weighted_tensors(self) -> Dict[str, torch.Tensor]:
        return {
            "adv_gen": self.adv_gen,
            "adv_disc": self.adv_disc,
            "feature_match": self.weights.fm * self.feature_match,
            "mel_l1": self.weights.mel * self.mel_l1,
            "cs": self.weights.cs * self.cs,
            "vocoder": self.weights.vocoder * self.vocoder,
        }

    @property
    def total(self) -> torch.Tensor:
        return sum(self._weighted_tensors().values())

    @property
    def generator_objective(self) -> torch.Tensor:
        return sum(_v for _k, _v in self._weighted_tensors().items() if _k != "adv_disc")

    def weighted(self) -> Dict[str, float]:
        return {_k: float(_v) for _k, _v in self._weighted_tensors().items()}

    def raw(self) -> Dict[str, float]:
        return {
            "adv_gen": float(self.adv_gen),
            "adv_disc": float(self.adv_disc),
            "feature_match": float(self.feature_match),
            "mel_l1": float(self.mel_l1),
            "cs": float(self.cs),
            "vocoder": float(self.vocoder),
        }

    def as_row(self) -> Dict[str, float]:
        """Weighted components plus `total`, the exact sum of the logged components."""

        _row = self.weighted()
        _row["total"] = sum(_row.values())
        return _row


def gan_losses(
    real_mel: torch.Tensor,
    fake_mel: torch.Tensor,
    mpd: MultiPeriodDiscriminator,
    msd: MultiScaleDiscriminator,
    weights: LossWeights = LossWeights(),
    cs: Optional[torch.Tensor] = None,
    vocoder: Optional[torch.Tensor] = None,
) -> LossBundle:
    """Least-squares GAN, feature matching and mel L1 terms for one real/fake pair.

    The discriminator term sees a detached `fake_mel`.

    Raises:
        ShapeError: If the mel shapes differ.
    """

    if real_mel.shape != fake_mel.shape:
        raise ShapeError(f"Real mel {tuple(real_mel.shape)} and fake mel {tuple(fake_mel.shape)} differ!")

    _real = _batched(real_mel)
    _fake = _batched(fake_mel)
    _real_outputs = mpd_forward(_real, mpd) + msd_forward(_real, msd)
    _fake_detached = mpd_forward(_fake.detach(), mpd) + msd_forward(_fake.detach(), msd)
    _fake_outputs = mpd_forward(_fake, mpd) + msd_forward(_fake, msd)

    _zero = torch.zeros((), dtype=_fake.dtype, device=_fake.device)
    return LossBundle(
        adv_gen=generator_adv_loss(_fake_outputs),
        adv_disc=discriminator_loss(_real_outputs, _fake_detached),
        feature_match=feature_matching_loss(_real_outputs, _fake_outputs),
        mel_l1=F.l1_loss(_fake, _real),
        cs=cs if cs is not None else _zero,
        vocoder=vocoder if vocoder is not None else _zero,
        weights=weights,
    )


__all__ = [
    "MRFBlock",
    "Generator",
    "PeriodDiscriminator",
    "MultiPeriodDiscriminator",
    "ScaleDiscriminator",
    "MultiScaleDiscriminator",
    "concat_condition",
    "generate_mel",
    "mpd_forward",
    "msd_forward",
    "discriminator_loss",
    "generator_adv_loss",
    "feature_matching_loss",
    "vocoder_consistency_loss",
    "LossBundle",
    "gan_losses",
]
