# -*- coding: utf-8 -*-
"""Procedural audiovisual speakers for the toy corpus.

Every speaker gets a timbre (base F0, formant scale, spectral tilt) and a face
whose shape is partly driven by the same voice parameters, so face-to-voice
mapping generalises to speakers held out from training. Lip frames animate a
mouth whose aperture, width and teeth encode the grapheme being spoken.
"""

## Standard libraries
from dataclasses import dataclass
from typing import List, Tuple

## Third-party libraries
import numpy as np

## Internal modules
from ._consts import ALPHABET
from ._schemas import AudioConfig, VideoConfig


_COMMANDS = ("bin", "lay", "place", "set")
_COLORS = ("blue", "green", "red", "white")
_LETTERS = tuple(_char for _char in "abcdefghijklmnopqrstuvxyz")
_DIGITS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")

_VOWELS = set("aeiouy")
_FRICATIVES = set("cfhjkpqstxz")
_BILABIALS = set("bmpw")

_LEAD_FRAMES = 3
_MAX_HARMONIC_HZ = 7000.0


@dataclass(frozen=True)
class MouthShape:
    aperture: float
    width: float
    teeth: bool
    voiced_gain: float
    noise_gain: float


_SILENCE = MouthShape(aperture=0.05, width=0.5, teeth=False, voiced_gain=0.0, noise_gain=0.004)


def _frac(value: float) -> float:
    return value - np.floor(value)


def mouth_shape(char: str) -> MouthShape:
    """Fixed articulation of a grapheme; identical for every corpus and seed."""

    if char == " ":
        return _SILENCE

    _id = ALPHABET.index(char) + 1
    _aperture = 0.15 + 0.8 * _frac(_id * 0.6180339887)
    if char in _BILABIALS:
        _aperture = 0.02

    return MouthShape(
        aperture=float(_aperture),
        width=float(0.35 + 0.55 * _frac(_id * 0.7548776662)),
        teeth=bool(_frac(_id * 0.5698402910) > 0.5),
        voiced_gain=1.0 if char in _VOWELS else 0.55,
        noise_gain=0.25 if char in _FRICATIVES else 0.01,
    )


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    f0: float
    formant_scale: float
    tilt: float
    skin: Tuple[float, float, float]
    lips: Tuple[float, float, float]
    hair: Tuple[float, float, float]
    background: Tuple[float, float, float]
    face_width: float
    face_height: float
    eye_spacing: float
    eye_size: float
    texture: Tuple[float, float, float, float]


def make_speaker(seed: int, index: int, n_speakers: int) -> SpeakerProfile:
    _rng = np.random.default_rng([seed, index, 0xFACE])
    # F0 spread evenly so every pair of speakers has a distinct fundamental
    _f0 = 90.0 + 150.0 * index / max(n_speakers - 1, 1) + _rng.uniform(-3.0, 3.0)
    _formant_scale = _rng.uniform(0.85, 1.15)
    _hair_light = float(np.clip((_f0 - 90.0) / 150.0, 0.0, 1.0))

    return SpeakerProfile(
        speaker_id=f"s{index + 1}",
        f0=float(_f0),
        formant_scale=float(_formant_scale),
        tilt=float(_rng.uniform(1.5, 2.0)),
        skin=tuple(float(_v) for _v in _rng.uniform([0.45, 0.3, 0.2], [0.95, 0.8, 0.7])),
        lips=tuple(float(_v) for _v in _rng.uniform([0.55, 0.1, 0.15], [0.85, 0.35, 0.4])),
        hair=(0.1 + 0.8 * _hair_light, 0.08 + 0.6 * _hair_light, 0.05 + 0.3 * _hair_light),
        background=tuple(float(_v) for _v in _rng.uniform(0.1, 0.9, size=3)),
        face_width=float(0.28 + 0.1 * (_formant_scale - 0.85) / 0.3),
        face_height=float(0.38 + 0.06 * _rng.uniform()),
        eye_spacing=float(_rng.uniform(0.13, 0.2)),
        eye_size=float(_rng.uniform(0.025, 0.045)),
        texture=tuple(float(_v) for _v in _rng.uniform([2.0, 2.0, 0.0, 0.0], [9.0, 9.0, 6.28, 6.28])),
    )


def make_transcript(rng: np.random.Generator) -> str:
    return " ".join(
        [
            _COMMANDS[rng.integers(len(_COMMANDS))],
            _COLORS[rng.integers(len(_COLORS))],
            _LETTERS[rng.integers(len(_LETTERS))],
            _DIGITS[rng.integers(len(_DIGITS))],
        ]
    )


def frame_schedule(transcript: str, n_frames: int) -> List[MouthShape]:
    """Assign one mouth shape per video frame.

    Leading/trailing silence pads the sentence; a silent frame separates repeated
    graphemes so every grapheme stays visible as its own segment.
    """

    _units: List[str] = []
    for _idx, _char in enumerate(transcript):
        if (_idx > 0) and (transcript[_idx - 1] == _char):
            _units.append("")
        _units.append(_char)

    _lead = min(_LEAD_FRAMES, max((n_frames - len(_units)) // 2, 0))
    _avail = n_frames - 2 * _lead
    if len(_units) > _avail:
        raise ValueError(
            f"Transcript '{transcript}' needs {len(_units)} frames, only {_avail} available!"
        )

    _bounds = np.linspace(0, _avail, len(_units) + 1).round().astype(int)
    _schedule = [_SILENCE] * _lead
    for _unit, _start, _stop in zip(_units, _bounds[:-1], _bounds[1:]):
        _shape = _SILENCE if _unit == "" else mouth_shape(_unit)
        _schedule.extend([_shape] * int(_stop - _start))

    _schedule.extend([_SILENCE] * (n_frames - len(_schedule)))
    return _schedule


def synthesize_waveform(
    profile: SpeakerProfile,
    schedule: List[MouthShape],
    audio_cfg: AudioConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Additive harmonic synthesis through a two-formant envelope."""

    _n = audio_cfg.num_samples
    _sr = float(audio_cfg.sample_rate)
    _spf = _n / len(schedule)
    _centers = (np.arange(len(schedule)) + 0.5) * _spf
    _t = np.arange(_n, dtype=np.float64)

    def _track(values: List[float]) -> np.ndarray:
        return np.interp(_t, _centers, np.asarray(values, dtype=np.float64))

    _voiced = _track([_s.voiced_gain for _s in schedule])
    _noise = _track([_s.noise_gain for _s in schedule])
    _f1 = _track([(250.0 + 650.0 * _s.aperture) * profile.formant_scale for _s in schedule])
    _f2 = _track([(800.0 + 1700.0 * _s.width) * profile.formant_scale for _s in schedule])

    _contour = 1.0 + 0.04 * np.sin(2.0 * np.pi * 0.5 * _t / _sr + rng.uniform(0.0, np.pi))
    _f0 = profile.f0 * _contour
    _phase = 2.0 * np.pi * np.cumsum(_f0) / _sr

    _n_harmonics = int(_MAX_HARMONIC_HZ // (profile.f0 * 1.05))
    _k = np.arange(1, _n_harmonics + 1, dtype=np.float64)[:, None]
    _freqs = _k * _f0[None, :]
    _bandwidth = 110.0 * profile.formant_scale
    _envelope = (
        1.0
        + 1.0 * np.exp(-0.5 * ((_freqs - _f1[None, :]) / _bandwidth) ** 2)
        + 0.6 * np.exp(-0.5 * ((_freqs - _f2[None, :]) / _bandwidth) ** 2)
    )
    _amps = _envelope / _k**profile.tilt
    _harmonic = (_amps * np.sin(_k * _phase[None, :])).sum(axis=0)

    _wav = _voiced * _harmonic + _noise * rng.standard_normal(_n)
    _peak = np.max(np.abs(_wav))
    if _peak > 0:
        _wav = 0.8 * _wav / _peak

    return _wav.astype(np.float32)


def _to_channels(img: np.ndarray, channels: int) -> np.ndarray:
    if channels == img.shape[0]:
        return img

    if channels == 1:
        return img.mean(axis=0, keepdims=True)

    return np.resize(img, (channels,) + img.shape[1:])


def _ellipse(
    yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, ry: float, rx: float
) -> np.ndarray:
    return ((yy - cy) / max(ry, 1e-3)) ** 2 + ((xx - cx) / max(rx, 1e-3)) ** 2 <= 1.0


def render_lips(
    profile: SpeakerProfile,
    schedule: List[MouthShape],
    video_cfg: VideoConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """uint8 frames [T, C, H, W] of a mouth region."""

    _h, _w = video_cfg.lip_height, video_cfg.lip_width
    _yy, _xx = np.mgrid[0:_h, 0:_w].astype(np.float32)
    _skin = np.asarray(profile.skin, dtype=np.float32)
    _lips = np.asarray(profile.lips, dtype=np.float32)
    _cavity = np.asarray([0.15, 0.04, 0.05], dtype=np.float32)
    _teeth = np.asarray([0.92, 0.9, 0.85], dtype=np.float32)
    _shade = 0.9 + 0.1 * (_yy / _h)

    _frames = np.empty((len(schedule), video_cfg.channels, _h, _w), dtype=np.uint8)
    for _idx, _shape in enumerate(schedule):
        _cy = _h * 0.55 + rng.uniform(-1.5, 1.5)
        _cx = _w * 0.5 + rng.uniform(-1.5, 1.5)
        _rx = (0.14 + 0.28 * _shape.width) * _w
        _ry = (0.06 + 0.2 * _shape.aperture) * _h
        _inner_ry = 0.17 * _shape.aperture * _h

        _img = _skin[:, None, None] * _shade[None]
        _img = np.where(_ellipse(_yy, _xx, _cy, _cx, _ry, _rx)[None], _lips[:, None, None], _img)
        _inner = _ellipse(_yy, _xx, _cy, _cx, _inner_ry, _rx * 0.8)
        _img = np.where(_inner[None], _cavity[:, None, None], _img)
        if _shape.teeth:
            _band = _inner & (_yy < _cy - 0.3 * _inner_ry)
            _img = np.where(_band[None], _teeth[:, None, None], _img)

        _img = _to_channels(_img, video_cfg.channels)
        _frames[_idx] = np.clip(_img * 255.0 + 0.5, 0, 255).astype(np.uint8)

    return _frames


def render_faces(
    profile: SpeakerProfile,
    n_frames: int,
    size: int,
    channels: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """uint8 face images [K, C, S, S]; identity fixed, small per-frame pose and light jitter."""

    _yy, _xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    _bg = np.asarray(profile.background, dtype=np.float32)
    _skin = np.asarray(profile.skin, dtype=np.float32)
    _hair = np.asarray(profile.hair, dtype=np.float32)
    _eye = np.asarray([0.08, 0.06, 0.05], dtype=np.float32)
    _lips = np.asarray(profile.lips, dtype=np.float32)
    _fx, _fy, _px, _py = profile.texture

    _frames = np.empty((n_frames, channels, size, size), dtype=np.uint8)
    for _idx in range(n_frames):
        _dx = rng.uniform(-0.015, 0.015)
        _dy = rng.uniform(-0.015, 0.015)
        _light = rng.uniform(0.97, 1.03)
        _cy, _cx = 0.52 + _dy, 0.5 + _dx

        _texture = 0.06 * np.sin(2 * np.pi * _fx * _xx + _px) * np.cos(2 * np.pi * _fy * _yy + _py)
        _img = (_bg[:, None, None] + _texture[None]) * np.ones((1, size, size), dtype=np.float32)
        _head = _ellipse(_yy, _xx, _cy, _cx, profile.face_height, profile.face_width)
        _img = np.where(_head[None], _skin[:, None, None] * (1.0 + _texture[None]), _img)
        _hair_mask = _head & (_yy < _cy - 0.6 * profile.face_height)
        _img = np.where(_hair_mask[None], _hair[:, None, None], _img)
        for _side in (-1.0, 1.0):
            _eye_mask = _ellipse(
                _yy,
                _xx,
                _cy - 0.12,
                _cx + _side * profile.eye_spacing,
                profile.eye_size,
                profile.eye_size * 1.6,
            )
            _img = np.where(_eye_mask[None], _eye[:, None, None], _img)
        _mouth = _ellipse(_yy, _xx, _cy + 0.2, _cx, 0.025, profile.face_width * 0.45)
        _img = np.where(_mouth[None], _lips[:, None, None], _img)

        _img = _to_channels(_img * _light, channels)
        _frames[_idx] = np.clip(_img * 255.0 + 0.5, 0, 255).astype(np.uint8)

    return _frames


__all__ = [
    "MouthShape",
    "SpeakerProfile",
    "mouth_shape",
    "make_speaker",
    "make_transcript",
    "frame_schedule",
    "synthesize_waveform",
    "render_lips",
    "render_faces",
]
