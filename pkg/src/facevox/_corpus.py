# -*- coding: utf-8 -*-

## Standard libraries
import io
import os
import glob
import shutil
import zipfile
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

## Third-party libraries
import numpy as np
import torch
import torch.nn.functional as F
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch.utils.data import Dataset
from tqdm import tqdm

## Internal modules
from ._consts import (
    CORPUS_SCHEMA_VERSION,
    MANIFEST_FILE,
    LIPS_FILE,
    FACE_FILE,
    AUDIO_FILE,
    TRANSCRIPT_FILE,
    SplitEnum,
)
from ._exceptions import (
    CorpusExistsError,
    CorpusLoadError,
    CorpusCorruptionError,
    DegenerateTaskError,
)
from ._schemas import AudioConfig, VideoConfig
from ._audio import (
    MelSpectrogram,
    compute_mel,
    read_pcm16,
    write_pcm16,
    read_audio_file,
)
from ._text import encode_transcript, is_valid_transcript
from . import _toy


_FACE_FRAMES_PER_UTTERANCE = 5
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_npz(file_path: Union[str, os.PathLike], **arrays: np.ndarray) -> None:
    """`np.savez_compressed` equivalent with fixed zip timestamps, so bytes depend on data only."""

    with zipfile.ZipFile(file_path, "w", compression=zipfile.ZIP_DEFLATED) as _zip:
        for _name in sorted(arrays):
            _buffer = io.BytesIO()
            np.lib.format.write_array(_buffer, np.ascontiguousarray(arrays[_name]), allow_pickle=False)
            _info = zipfile.ZipInfo(f"{_name}.npy", date_time=_ZIP_EPOCH)
            _info.compress_type = zipfile.ZIP_DEFLATED
            _info.external_attr = 0o644 << 16
            _zip.writestr(_info, _buffer.getvalue())


def load_npz_array(file_path: Union[str, os.PathLike], key: str) -> np.ndarray:
    try:
        with np.load(file_path, allow_pickle=False) as _npz:
            return _npz[key]
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as err:
        raise CorpusCorruptionError(f"'{file_path}' is unreadable: {err}") from err


class ManifestEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    speaker_id: str
    utterance_id: str
    transcript: str
    split: SplitEnum


class SkippedItem(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    path: str
    reason: str


class CorpusManifest(BaseModel):
    """Index of a corpus directory (`root/manifest.json`, schema v1).

    `root` is not serialised: it's the directory the manifest was loaded from.
    """

    model_config = ConfigDict(extra="forbid")

    schema_version: int = CORPUS_SCHEMA_VERSION
    source: str = "toy"
    seed: Optional[int] = None
    audio: AudioConfig = AudioConfig()
    video: VideoConfig = VideoConfig()
    face_size: int = 128
    face_frames: int = _FACE_FRAMES_PER_UTTERANCE
    unseen_speakers: List[str] = []
    entries: List[ManifestEntry] = []
    skipped: List[SkippedItem] = []
    root: str = Field("", exclude=True)

    @model_validator(mode="after")
    def _check_entries(self) -> "CorpusManifest":
        if self.schema_version != CORPUS_SCHEMA_VERSION:
            raise CorpusCorruptionError(
                f"Manifest schema v{self.schema_version} is not supported (expected v{CORPUS_SCHEMA_VERSION})!"
            )

        _seen = set()
        for _entry in self.entries:
            _key = (_entry.speaker_id, _entry.utterance_id)
            if _key in _seen:
                raise CorpusCorruptionError(f"Duplicate manifest entry {_key}!")
            _seen.add(_key)

        return self

    def speakers(self, split: Optional[SplitEnum] = None) -> List[str]:
        return sorted(
            {_e.speaker_id for _e in self.entries if (split is None) or (_e.split == split)},
            key=natural_key,
        )

    def split_entries(self, split: Optional[SplitEnum] = None) -> List[ManifestEntry]:
        if split is None:
            return list(self.entries)

        return [_e for _e in self.entries if _e.split == SplitEnum(split)]

    def get(self, speaker_id: str, utterance_id: str) -> ManifestEntry:
        for _entry in self.entries:
            if (_entry.speaker_id == speaker_id) and (_entry.utterance_id == utterance_id):
                return _entry

        raise CorpusLoadError(f"Unknown utterance '{speaker_id}/{utterance_id}'!")

    def utterance_dir(self, speaker_id: str, utterance_id: str) -> str:
        return os.path.join(self.root, speaker_id, utterance_id)

    def save(self) -> str:
        _path = os.path.join(self.root, MANIFEST_FILE)
        with open(_path, "w", encoding="utf-8") as _file:
            _file.write(self.model_dump_json(indent=2))
            _file.write("\n")

        return _path

    @classmethod
    def load(cls, root: Union[str, os.PathLike]) -> "CorpusManifest":
        """Load `root/manifest.json`.

        Raises:
            CorpusLoadError      : If the manifest file doesn't exist.
            CorpusCorruptionError: If it doesn't validate.
        """

        _root = os.path.abspath(os.fspath(root))
        _path = os.path.join(_root, MANIFEST_FILE)
        if not os.path.isfile(_path):
            raise CorpusLoadError(f"No manifest at '{_path}'!")

        try:
            with open(_path, "r", encoding="utf-8") as _file:
                _manifest = cls.model_validate_json(_file.read())
        except CorpusCorruptionError:
            raise
        except ValueError as err:
            raise CorpusCorruptionError(f"Manifest '{_path}' is invalid: {err}") from err

        _manifest.root = _root
        return _manifest


def natural_key(text: str) -> Tuple:
    _digits = "".join(_c for _c in text if _c.isdigit())
    return (text.rstrip("0123456789"), int(_digits) if _digits else -1, text)


@dataclass
class UtteranceSample:
    speaker_id: str
    utterance_id: str
    lip_frames: torch.Tensor
    face_frames: torch.Tensor
    waveform: torch.Tensor
    transcript: str

    @property
    def face_image(self) -> torch.Tensor:
        return self.face_frames[0]


def assign_splits(
    keys: List[Tuple[str, str]],
    ratios: Tuple[float, float, float],
    seed: int,
    unseen_speakers: Optional[List[str]] = None,
) -> Dict[Tuple[str, str], SplitEnum]:
    """Disjoint train/val/test assignment.

    Val and test get `max(1, round(n * ratio))` utterances each (when n >= 3), picked
    round-robin across speakers so no seen speaker drops out of train. Utterances of
    `unseen_speakers` all go to test.
    """

    _unseen = set(unseen_speakers or [])
    _rng = np.random.default_rng([seed, 0x5B11])
    _by_speaker: Dict[str, List[Tuple[str, str]]] = {}
    for _key in keys:
        if _key[0] not in _unseen:
            _by_speaker.setdefault(_key[0], []).append(_key)

    _n = sum(len(_v) for _v in _by_speaker.values())
    _splits = {_key: SplitEnum.TEST for _key in keys if _key[0] in _unseen}
    if _n == 0:
        return _splits

    _n_val = max(1, int(round(_n * ratios[1]))) if (_n >= 3) and (ratios[1] > 0) else 0
    _n_test = max(1, int(round(_n * ratios[2]))) if (_n >= 3) and (ratios[2] > 0) else 0

    _pools = {}
    for _speaker in sorted(_by_speaker, key=natural_key):
        _items = sorted(_by_speaker[_speaker])
        _pools[_speaker] = [_items[_i] for _i in _rng.permutation(len(_items))]
    _order = [sorted(_pools, key=natural_key)[_i] for _i in _rng.permutation(len(_pools))]

    def _take(count: int) -> List[Tuple[str, str]]:
        _taken = []
        _cursor = 0
        while len(_taken) < count:
            _candidates = [_s for _s in _order if len(_pools[_s]) > 1]
            if not _candidates:
                break
            _speaker = _candidates[_cursor % len(_candidates)]
            _taken.append(_pools[_speaker].pop())
            _cursor += 1
        return _taken

    for _key in _take(_n_val):
        _splits[_key] = SplitEnum.VAL
    for _key in _take(_n_test):
        _splits[_key] = SplitEnum.TEST
    for _items in _pools.values():
        for _key in _items:
            _splits[_key] = SplitEnum.TRAIN

    return _splits


def _prepare_root(root: Union[str, os.PathLike], force: bool) -> str:
    _root = os.path.abspath(os.fspath(root))
    if os.path.exists(_root) and (os.listdir(_root) if os.path.isdir(_root) else True):
        if not force:
            raise CorpusExistsError(f"Corpus root '{_root}' already exists, use force to overwrite!")

        logger.warning(f"Overwriting existing corpus root '{_root}'.")
        if os.path.isdir(_root):
            shutil.rmtree(_root)
        else:
            os.remove(_root)

    os.makedirs(_root, exist_ok=True)
    return _root


def _write_utterance(
    root: str,
    speaker_id: str,
    utterance_id: str,
    lip_frames: np.ndarray,
    face_frames: np.ndarray,
    waveform: np.ndarray,
    transcript: str,
) -> None:
    _dir = os.path.join(root, speaker_id, utterance_id)
    os.makedirs(_dir, exist_ok=True)
    save_npz(os.path.join(_dir, LIPS_FILE), frames=lip_frames)
    save_npz(os.path.join(_dir, FACE_FILE), frames=face_frames)
    write_pcm16(os.path.join(_dir, AUDIO_FILE), waveform)
    with open(os.path.join(_dir, TRANSCRIPT_FILE), "w", encoding="utf-8") as _file:
        _file.write(transcript + "\n")


def generate_toy_corpus(
    root: Union[str, os.PathLike],
    n_speakers: int,
    utterances_per_speaker: int,
    seed: int,
    audio_cfg: AudioConfig,
    video_cfg: VideoConfig,
    face_size: int = 128,
    split_ratios: Tuple[float, float, float] = (0.9, 0.05, 0.05),
    unseen_speakers: int = 0,
    force: bool = False,
) -> CorpusManifest:
    """Write a procedural audiovisual corpus under `root` and return its manifest.

    Args:
        root                   (str        , required): Output directory; must be absent or empty unless `force`.
        n_speakers             (int        , required): Number of synthetic speakers (>= 2).
        utterances_per_speaker (int        , required): Utterances per speaker (>= 4).
        seed                   (int        , required): Generation seed; same seed and args give identical bytes.
        audio_cfg              (AudioConfig, required): Audio framing.
        video_cfg              (VideoConfig, required): Video framing.
        face_size              (int        , optional): Face image side in pixels. Defaults to 128.
        split_ratios           (tuple      , optional): Train/val/test ratios. Defaults to (0.9, 0.05, 0.05).
        unseen_speakers        (int        , optional): Trailing speakers held out to test only. Defaults to 0.
        force                  (bool       , optional): Overwrite an existing root. Defaults to False.

    Raises:
        DegenerateTaskError: If `n_speakers` < 2 or `utterances_per_speaker` < 4.
        CorpusExistsError  : If `root` exists and isn't empty, without `force`.

    Returns:
        CorpusManifest: Saved manifest.
    """

    if n_speakers < 2:
        raise DegenerateTaskError(f"n_speakers ({n_speakers}) must be >= 2!")

    if utterances_per_speaker < 4:
        raise DegenerateTaskError(f"utterances_per_speaker ({utterances_per_speaker}) must be >= 4!")

    if unseen_speakers > n_speakers - 2:
        raise DegenerateTaskError(
            f"unseen_speakers ({unseen_speakers}) must leave at least 2 seen speakers!"
        )

    _root = _prepare_root(root, force)
    logger.info(
        f"Generating toy corpus: {n_speakers} speakers x {utterances_per_speaker} utterances (seed={seed}) into '{_root}'..."
    )

    _profiles = [_toy.make_speaker(seed, _i, n_speakers) for _i in range(n_speakers)]
    _transcripts: Dict[Tuple[str, str], str] = {}
    for _spk_idx, _profile in enumerate(tqdm(_profiles, desc="speakers", leave=False)):
        for _utt_idx in range(utterances_per_speaker):
            _rng = np.random.default_rng([seed, _spk_idx, _utt_idx])
            _utterance_id = f"u{_utt_idx + 1:03d}"
            _transcript = _toy.make_transcript(_rng)
            _schedule = _toy.frame_schedule(_transcript, video_cfg.frames_per_utterance)
            _wav = _toy.synthesize_waveform(_profile, _schedule, audio_cfg, _rng)
            _lips = _toy.render_lips(_profile, _schedule, video_cfg, _rng)
            _faces = _toy.render_faces(
                _profile, _FACE_FRAMES_PER_UTTERANCE, face_size, video_cfg.channels, _rng
            )
            _write_utterance(
                _root, _profile.speaker_id, _utterance_id, _lips, _faces, _wav, _transcript
            )
            _transcripts[(_profile.speaker_id, _utterance_id)] = _transcript

    _unseen = [_p.speaker_id for _p in _profiles[n_speakers - unseen_speakers :]] if unseen_speakers else []
    _splits = assign_splits(list(_transcripts), split_ratios, seed, _unseen)
    _manifest = CorpusManifest(
        source="toy",
        seed=seed,
        audio=audio_cfg,
        video=video_cfg,
        face_size=face_size,
        face_frames=_FACE_FRAMES_PER_UTTERANCE,
        unseen_speakers=_unseen,
        entries=[
            ManifestEntry(
                speaker_id=_key[0], utterance_id=_key[1], transcript=_text, split=_splits[_key]
            )
            for _key, _text in _transcripts.items()
        ],
        root=_root,
    )
    _manifest.save()

    _counts = {_s.value: len(_manifest.split_entries(_s)) for _s in SplitEnum}
    logger.success(f"Toy corpus ready: {len(_manifest.entries)} utterances, splits {_counts}.")
    return _manifest


def load_utterance(manifest: CorpusManifest, speaker_id: str, utterance_id: str) -> UtteranceSample:
    """Read and validate one utterance.

    Raises:
        CorpusLoadError      : If the id pair is unknown or a file is missing (nothing is read).
        CorpusCorruptionError: If any field violates its shape/length/value invariants.

    Returns:
        UtteranceSample: Frames as float32 in [0, 1], waveform as float32 in [-1, 1].
    """

    _entry = manifest.get(speaker_id, utterance_id)
    _dir = manifest.utterance_dir(speaker_id, utterance_id)
    _paths = {
        _name: os.path.join(_dir, _name)
        for _name in (LIPS_FILE, FACE_FILE, AUDIO_FILE, TRANSCRIPT_FILE)
    }
    _missing = [_path for _path in _paths.values() if not os.path.isfile(_path)]
    if _missing:
        raise CorpusLoadError(f"Utterance '{speaker_id}/{utterance_id}' is missing files: {_missing}")

    _video = manifest.video
    _lips = load_npz_array(_paths[LIPS_FILE], "frames")
    _expected = (_video.frames_per_utterance, _video.channels, _video.lip_height, _video.lip_width)
    if tuple(_lips.shape) != _expected:
        raise CorpusCorruptionError(
            f"'{_paths[LIPS_FILE]}' has shape {tuple(_lips.shape)}, expected {_expected}!"
        )

    _faces = load_npz_array(_paths[FACE_FILE], "frames")
    if (_faces.ndim != 4) or (_faces.shape[0] < 1) or (
        tuple(_faces.shape[1:]) != (_video.channels, manifest.face_size, manifest.face_size)
    ):
        raise CorpusCorruptionError(
            f"'{_paths[FACE_FILE]}' has shape {tuple(_faces.shape)}, expected [K, {_video.channels}, {manifest.face_size}, {manifest.face_size}]!"
        )

    _wav = read_pcm16(_paths[AUDIO_FILE])
    if _wav.shape[0] != manifest.audio.num_samples:
        raise CorpusCorruptionError(
            f"'{_paths[AUDIO_FILE]}' has {_wav.shape[0]} samples, expected {manifest.audio.num_samples}!"
        )

    with open(_paths[TRANSCRIPT_FILE], "r", encoding="utf-8") as _file:
        _transcript = _file.read().strip()
    if (not is_valid_transcript(_transcript)) or (_transcript != _entry.transcript):
        raise CorpusCorruptionError(
            f"'{_paths[TRANSCRIPT_FILE]}' transcript '{_transcript}' is invalid or disagrees with the manifest!"
        )

    return UtteranceSample(
        speaker_id=speaker_id,
        utterance_id=utterance_id,
        lip_frames=torch.from_numpy(_to_unit(_lips)),
        face_frames=torch.from_numpy(_to_unit(_faces)),
        waveform=torch.from_numpy(_wav),
        transcript=_transcript,
    )


def _to_unit(frames: np.ndarray) -> np.ndarray:
    if frames.dtype == np.uint8:
        return frames.astype(np.float32) / 255.0

    _frames = frames.astype(np.float32)
    if (not np.all(np.isfinite(_frames))) or (_frames.min() < 0.0) or (_frames.max() > 1.0):
        raise CorpusCorruptionError("Frame values must be uint8 or floats in [0, 1]!")

    return _frames


def _read_grid_transcript(speaker_dir: str, utterance_id: str) -> Optional[str]:
    _align = os.path.join(speaker_dir, "align", f"{utterance_id}.align")
    _text = os.path.join(speaker_dir, "transcripts", f"{utterance_id}.txt")
    if os.path.isfile(_align):
        _words = []
        with open(_align, "r", encoding="utf-8") as _file:
            for _line in _file:
                _parts = _line.split()
                if (len(_parts) >= 3) and (_parts[2] not in ("sil", "sp")):
                    _words.append(_parts[2].lower())
        return " ".join(_words)

    if os.path.isfile(_text):
        with open(_text, "r", encoding="utf-8") as _file:
            return " ".join(_file.read().lower().split())

    return None


def _as_tchw(frames: np.ndarray, channels: int) -> np.ndarray:
    """Accept [T, H, W], [T, H, W, C] or [T, C, H, W] frame stacks."""

    if frames.ndim == 3:
        frames = frames[:, None]
    elif (frames.ndim == 4) and (frames.shape[-1] in (1, 3)) and (frames.shape[1] not in (1, 3)):
        frames = frames.transpose(0, 3, 1, 2)

    if frames.ndim != 4:
        raise ValueError(f"Frames have unsupported shape {frames.shape}!")

    if frames.shape[1] != channels:
        _gray = frames if frames.shape[1] == 1 else frames.mean(axis=1, keepdims=True).astype(frames.dtype)
        frames = np.repeat(_gray, channels, axis=1)

    return frames


def _resize_frames(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    _unit = torch.from_numpy(_to_unit(frames))
    if tuple(_unit.shape[-2:]) != (height, width):
        _unit = F.interpolate(_unit, size=(height, width), mode="bilinear", align_corners=False)

    return np.clip(_unit.numpy() * 255.0 + 0.5, 0, 255).astype(np.uint8)


def _fit_frames(frames: np.ndarray, count: int) -> np.ndarray:
    if frames.shape[0] >= count:
        return frames[:count]

    _pad = np.repeat(frames[-1:], count - frames.shape[0], axis=0)
    return np.concatenate([frames, _pad], axis=0)


def grid_import(
    directory: Union[str, os.PathLike],
    root: Union[str, os.PathLike],
    audio_cfg: AudioConfig,
    video_cfg: VideoConfig,
    face_size: int = 128,
    split_ratios: Tuple[float, float, float] = (0.9, 0.05, 0.05),
    seed: int = 0,
    force: bool = False,
) -> CorpusManifest:
    """Convert a GRID-format directory into a corpus under `root`.

    Expected layout per speaker `<directory>/<speaker>/`:
        audio/<utt>.wav               any soundfile-readable audio, any sample rate
        lips/<utt>.npz | <utt>.npy    lip crops [T, H, W(, C)] or [T, C, H, W] (npz key 'frames' or first array)
        align/<utt>.align             GRID alignment ("start end word"), or transcripts/<utt>.txt
        face/<utt>.npz (optional)     face images; derived from the lip crops when absent

    Unreadable or invalid utterances are skipped and listed in `manifest.skipped`.
    """

    _directory = os.path.abspath(os.fspath(directory))
    if not os.path.isdir(_directory):
        raise CorpusLoadError(f"GRID directory '{_directory}' does not exist!")

    _root = _prepare_root(root, force)
    _skipped: List[SkippedItem] = []
    _transcripts: Dict[Tuple[str, str], str] = {}

    _speaker_dirs = sorted(
        (_d for _d in glob.glob(os.path.join(_directory, "*")) if os.path.isdir(_d)),
        key=lambda _d: natural_key(os.path.basename(_d)),
    )
    for _speaker_dir in _speaker_dirs:
        _speaker_id = os.path.basename(_speaker_dir)
        for _audio_path in sorted(glob.glob(os.path.join(_speaker_dir, "audio", "*.wav"))):
            _utterance_id = os.path.splitext(os.path.basename(_audio_path))[0]
            try:
                _transcript = _read_grid_transcript(_speaker_dir, _utterance_id)
                if (_transcript is None) or (not is_valid_transcript(_transcript)):
                    raise ValueError(f"missing or invalid transcript {_transcript!r}")

                _lips_raw = _load_any_frames(os.path.join(_speaker_dir, "lips", _utterance_id))
                _lips = _as_tchw(_lips_raw, video_cfg.channels)
                _lips = _fit_frames(
                    _resize_frames(_lips, video_cfg.lip_height, video_cfg.lip_width),
                    video_cfg.frames_per_utterance,
                )
                _face_base = os.path.join(_speaker_dir, "face", _utterance_id)
                _face_raw = _load_any_frames(_face_base) if _has_frames(_face_base) else _lips_raw
                _faces = _resize_frames(_as_tchw(_face_raw, video_cfg.channels), face_size, face_size)
                _faces = _faces[:: max(1, _faces.shape[0] // _FACE_FRAMES_PER_UTTERANCE)][
                    :_FACE_FRAMES_PER_UTTERANCE
                ]
                _wav = read_audio_file(_audio_path, audio_cfg)
            except Exception as err:
                logger.warning(f"Skipping '{_speaker_id}/{_utterance_id}': {err}")
                _skipped.append(SkippedItem(path=_audio_path, reason=str(err)))
                continue

            _write_utterance(_root, _speaker_id, _utterance_id, _lips, _faces, _wav, _transcript)
            _transcripts[(_speaker_id, _utterance_id)] = _transcript

    if not _transcripts:
        logger.warning(f"No importable utterances found under '{_directory}'.")

    _splits = assign_splits(list(_transcripts), split_ratios, seed)
    _manifest = CorpusManifest(
        source="grid",
        seed=seed,
        audio=audio_cfg,
        video=video_cfg,
        face_size=face_size,
        face_frames=_FACE_FRAMES_PER_UTTERANCE,
        entries=[
            ManifestEntry(speaker_id=_k[0], utterance_id=_k[1], transcript=_t, split=_splits[_k])
            for _k, _t in _transcripts.items()
        ],
        skipped=_skipped,
        root=_root,
    )
    _manifest.save()
    logger.info(
        f"Imported {len(_manifest.entries)} utterances from '{_directory}' ({len(_skipped)} skipped)."
    )
    return _manifest


def _has_frames(base_path: str) -> bool:
    return os.path.isfile(base_path + ".npz") or os.path.isfile(base_path + ".npy")


def _load_any_frames(base_path: str) -> np.ndarray:
    if os.path.isfile(base_path + ".npy"):
        return np.load(base_path + ".npy", allow_pickle=False)

    if os.path.isfile(base_path + ".npz"):
        with np.load(base_path + ".npz", allow_pickle=False) as _npz:
            _key = "frames" if "frames" in _npz.files else _npz.files[0]
            return _npz[_key]

    raise FileNotFoundError(f"No frames at '{base_path}.npz' or '{base_path}.npy'")


class UtteranceDataset(Dataset):
    """Torch dataset over one split; mel features are computed once and cached in memory.

    Items are dicts with `lip_frames` [T, C, 144, 144], `face_frames` [K, C, S, S],
    `mel` [mel_bins, T_m], `waveform` [N], `targets` (grapheme ids), `speaker_index`,
    `speaker_id`, `utterance_id`, `transcript`.
    """

    def __init__(
        self,
        manifest: CorpusManifest,
        split: Optional[Union[SplitEnum, str]] = SplitEnum.TRAIN,
        speakers: Optional[List[str]] = None,
    ):
        self.manifest = manifest
        self.entries = manifest.split_entries(SplitEnum(split) if split is not None else None)
        self.speakers = speakers or manifest.speakers()
        self._speaker_index = {_s: _i for _i, _s in enumerate(self.speakers)}
        self._mel_cache: Dict[Tuple[str, str], torch.Tensor] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def mel(self, sample: UtteranceSample) -> torch.Tensor:
        _key = (sample.speaker_id, sample.utterance_id)
        if _key not in self._mel_cache:
            _mel: MelSpectrogram = compute_mel(sample.waveform.numpy(), self.manifest.audio)
            self._mel_cache[_key] = torch.from_numpy(_mel.values)

        return self._mel_cache[_key]

    def __getitem__(self, index: int) -> Dict[str, object]:
        _entry = self.entries[index]
        _sample = load_utterance(self.manifest, _entry.speaker_id, _entry.utterance_id)
        return {
            "lip_frames": _sample.lip_frames,
            "face_frames": _sample.face_frames,
            "mel": self.mel(_sample),
            "waveform": _sample.waveform,
            "targets": torch.tensor(encode_transcript(_sample.transcript).ids, dtype=torch.long),
            "speaker_index": self._speaker_index.get(_sample.speaker_id, -1),
            "speaker_id": _sample.speaker_id,
            "utterance_id": _sample.utterance_id,
            "transcript": _sample.transcript,
        }


def collate_utterances(items: List[Dict[str, object]]) -> Dict[str, object]:
    """Stack fixed-size fields; concatenate CTC targets with their lengths."""

    _targets = [_item["targets"] for _item in items]
    return {
        "lip_frames": torch.stack([_item["lip_frames"] for _item in items]),
        "face_frames": torch.stack([_item["face_frames"] for _item in items]),
        "mel": torch.stack([_item["mel"] for _item in items]),
        "waveform": torch.stack([_item["waveform"] for _item in items]),
        "targets": torch.cat(_targets),
        "target_lengths": torch.tensor([len(_t) for _t in _targets], dtype=torch.long),
        "speaker_index": torch.tensor([_item["speaker_index"] for _item in items], dtype=torch.long),
        "speaker_id": [_item["speaker_id"] for _item in items],
        "utterance_id": [_item["utterance_id"] for _item in items],
        "transcript": [_item["transcript"] for _item in items],
    }


__all__ = [
    "save_npz",
    "load_npz_array",
    "ManifestEntry",
    "SkippedItem",
    "CorpusManifest",
    "UtteranceSample",
    "assign_splits",
    "generate_toy_corpus",
    "load_utterance",
    "grid_import",
    "UtteranceDataset",
    "collate_utterances",
]
