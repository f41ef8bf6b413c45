# -*- coding: utf-8 -*-

## Standard libraries
import os
import functools
from dataclasses import dataclass
from typing import Union

## Third-party libraries
import numpy as np
import librosa
import soundfile as sf
from loguru import logger

## Internal modules
from ._schemas import AudioConfig
from ._exceptions import ShapeError, CorpusCorruptionError


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-power mel matrix [mel_bins, T_m] plus framing provenance."""

    values: np.ndarray
    sample_rate: int
    hop: int
    win: int

    @property
    def mel_bins(self) -> int:
        return int(self.values.shape[0])

    @property
    def frames(self) -> int:
        return int(self.values.shape[1])

    @classmethod
    def from_array(cls, values: np.ndarray, audio_cfg: AudioConfig) -> "MelSpectrogram":
        return cls(
            values=np.asarray(values, dtype=np.float32),
            sample_rate=audio_cfg.sample_rate,
            hop=audio_cfg.hop,
            win=audio_cfg.win,
        )


@functools.lru_cache(maxsize=8)
def mel_filterbank(
    sample_rate: int, fft_size: int, mel_bins: int, fmin: float, fmax: float
) -> np.ndarray:
    """[mel_bins, fft_size // 2 + 1] Slaney-normalised triangular filterbank."""

    _basis = librosa.filters.mel(
        sr=sample_rate, n_fft=fft_size, n_mels=mel_bins, fmin=fmin, fmax=fmax
    ).astype(np.float32)
    _basis.setflags(write=False)
    return _basis


def _filterbank(audio_cfg: AudioConfig) -> np.ndarray:
    return mel_filterbank(
        audio_cfg.sample_rate,
        audio_cfg.fft_size,
        audio_cfg.mel_bins,
        audio_cfg.fmin,
        audio_cfg.fmax,
    )


def compute_mel(waveform: np.ndarray, audio_cfg: AudioConfig) -> MelSpectrogram:
    """Center-padded log-mel spectrogram with exactly `len(waveform) / hop` frames.

    Args:
        waveform  (np.ndarray , required): Mono waveform of `audio_cfg.num_samples` samples.
        audio_cfg (AudioConfig, required): STFT and mel parameters.

    Raises:
        ShapeError: If the waveform isn't 1-D or has the wrong length.
        ValueError: If the waveform has NaN or Inf values.

    Returns:
        MelSpectrogram: Values are >= log(mel_floor).
    """

    _wav = np.asarray(waveform, dtype=np.float32)
    if _wav.ndim != 1:
        raise ShapeError(f"Waveform must be 1-D, got shape {_wav.shape}!")

    if _wav.shape[0] != audio_cfg.num_samples:
        raise ShapeError(
            f"Waveform length {_wav.shape[0]} != sample_rate x utterance_seconds ({audio_cfg.num_samples})!"
        )

    if not np.all(np.isfinite(_wav)):
        raise ValueError("Waveform has NaN or Inf values!")

    _stft = librosa.stft(
        _wav,
        n_fft=audio_cfg.fft_size,
        hop_length=audio_cfg.hop,
        win_length=audio_cfg.win,
        window="hann",
        center=True,
        pad_mode="reflect",
    )
    # center padding yields 1 + N / hop frames; the trailing half-frame is dropped
    _power = np.abs(_stft[:, : audio_cfg.mel_frames]) ** 2
    _mel = _filterbank(audio_cfg) @ _power
    _log_mel = np.log(np.maximum(_mel, audio_cfg.mel_floor)).astype(np.float32)

    return MelSpectrogram.from_array(_log_mel, audio_cfg)


def mel_to_linear(mel: MelSpectrogram, audio_cfg: AudioConfig) -> np.ndarray:
    """Linear STFT magnitude [fft_size // 2 + 1, T_m] from a log-mel, floor treated as silence."""

    _power = np.maximum(np.exp(mel.values.astype(np.float64)) - audio_cfg.mel_floor, 0.0)
    return librosa.feature.inverse.mel_to_stft(
        _power.astype(np.float32),
        sr=audio_cfg.sample_rate,
        n_fft=audio_cfg.fft_size,
        power=2.0,
        fmin=audio_cfg.fmin,
        fmax=audio_cfg.fmax,
    )


def griffin_lim(
    mel: MelSpectrogram, audio_cfg: AudioConfig, iterations: int = 60, seed: int = 0
) -> np.ndarray:
    """Render a waveform of `T_m * hop` samples from a log-mel by Griffin-Lim phase recovery.

    Args:
        mel        (MelSpectrogram, required): Log-mel to invert.
        audio_cfg  (AudioConfig   , required): STFT and mel parameters.
        iterations (int           , optional): Griffin-Lim iterations. Defaults to 60.
        seed       (int           , optional): Seed of the random initial phase. Defaults to 0.

    Returns:
        np.ndarray: float32 waveform clipped to [-1, 1].
    """

    if iterations < 1:
        raise ValueError(f"iterations ({iterations}) must be >= 1!")

    if mel.mel_bins != audio_cfg.mel_bins:
        raise ShapeError(f"Mel has {mel.mel_bins} bins, expected {audio_cfg.mel_bins}!")

    _length = mel.frames * audio_cfg.hop
    _magnitude = mel_to_linear(mel, audio_cfg)
    if not np.any(_magnitude > 0):
        return np.zeros(_length, dtype=np.float32)

    _wav = librosa.griffinlim(
        _magnitude,
        n_iter=iterations,
        hop_length=audio_cfg.hop,
        win_length=audio_cfg.win,
        n_fft=audio_cfg.fft_size,
        window="hann",
        center=True,
        length=_length,
        init="random",
        random_state=seed,
    )
    return np.clip(_wav, -1.0, 1.0).astype(np.float32)


def fit_length(waveform: np.ndarray, length: int) -> np.ndarray:
    """Zero-pad or trim a 1-D array to `length` samples."""

    if waveform.shape[0] >= length:
        return waveform[:length]

    return np.pad(waveform, (0, length - waveform.shape[0]))


def resample(waveform: np.ndarray, orig_sr: int, target_sr: int) -> np.ndarray:
    if orig_sr == target_sr:
        return waveform.astype(np.float32)

    return librosa.resample(
        waveform.astype(np.float32), orig_sr=orig_sr, target_sr=target_sr, res_type="polyphase"
    ).astype(np.float32)


def read_audio_file(file_path: Union[str, os.PathLike], audio_cfg: AudioConfig) -> np.ndarray:
    """Read any `soundfile`-readable file as mono, resample and pad/trim to the utterance length."""

    _data, _sr = sf.read(os.fspath(file_path), dtype="float32", always_2d=True)
    _mono = _data.mean(axis=1)
    if _sr != audio_cfg.sample_rate:
        logger.debug(f"Resampling '{file_path}' from {_sr} Hz to {audio_cfg.sample_rate} Hz.")
        _mono = resample(_mono, _sr, audio_cfg.sample_rate)

    return np.clip(fit_length(_mono, audio_cfg.num_samples), -1.0, 1.0).astype(np.float32)


def write_pcm16(file_path: Union[str, os.PathLike], waveform: np.ndarray) -> None:
    """Headerless little-endian 16-bit mono PCM."""

    _ints = np.round(np.clip(waveform, -1.0, 1.0) * 32767.0).astype("<i2")
    with open(file_path, "wb") as _file:
        _file.write(_ints.tobytes())


def read_pcm16(file_path: Union[str, os.PathLike]) -> np.ndarray:
    with open(file_path, "rb") as _file:
        _raw = _file.read()

    if len(_raw) % 2 != 0:
        raise CorpusCorruptionError(f"'{file_path}' has an odd byte count, not 16-bit PCM!")

    return (np.frombuffer(_raw, dtype="<i2").astype(np.float32) / 32767.0).clip(-1.0, 1.0)


def write_wav(file_path: Union[str, os.PathLike], waveform: np.ndarray, sample_rate: int) -> None:
    sf.write(os.fspath(file_path), np.clip(waveform, -1.0, 1.0), sample_rate, subtype="PCM_16")


__all__ = [
    "MelSpectrogram",
    "mel_filterbank",
    "compute_mel",
    "mel_to_linear",
    "griffin_lim",
    "fit_length",
    "resample",
    "read_audio_file",
    "write_pcm16",
    "read_pcm16",
    "write_wav",
]
