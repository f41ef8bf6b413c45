# -*- coding: utf-8 -*-

## Standard libraries
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

## Third-party libraries
import numpy as np
import torch
import torch.nn as nn
from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

## Internal modules
from ._consts import FaceFramesEnum, SplitEnum
from ._exceptions import EmbeddingError, SelectionError, ShapeError
from ._schemas import FacevoxConfig
from ._audio import MelSpectrogram, griffin_lim, write_wav
from ._corpus import CorpusManifest, load_utterance, natural_key, save_npz
from ._face import FaceEncoder, face_forward, select_face_frame
from ._lip import lip_forward
from ._decoder import concat_condition, generate_mel
from ._checkpoint import load_checkpoint
from ._train import freeze, load_stage_modules


@dataclass
class EmbeddingPool:
    """Face embeddings per speaker with their utterance ids and per-speaker averages."""

    embeddings: Dict[str, np.ndarray]
    utterance_ids: Dict[str, List[str]]
    averages: Dict[str, np.ndarray] = field(init=False)

    def __post_init__(self):
        for _speaker, _matrix in self.embeddings.items():
            if (_matrix.ndim != 2) or (_matrix.shape[0] == 0):
                raise SelectionError(f"Speaker '{_speaker}' has no embeddings in the pool!")

            if _matrix.shape[0] != len(self.utterance_ids.get(_speaker, [])):
                raise SelectionError(f"Speaker '{_speaker}' embeddings and utterance ids don't line up!")

        self.averages = {
            _speaker: _matrix.astype(np.float64).mean(axis=0) for _speaker, _matrix in self.embeddings.items()
        }

    @property
    def speakers(self) -> List[str]:
        return sorted(self.embeddings)


def resolve_face_embedding(
    frames: torch.Tensor,
    face: FaceEncoder,
    mode: Union[FaceFramesEnum, str] = FaceFramesEnum.SINGLE,
    rng: Optional[np.random.Generator] = None,
) -> torch.Tensor:
    """Face embedding from frames [K, C, S, S]: one random frame, or the mean over all frames."""

    if FaceFramesEnum(mode) == FaceFramesEnum.AVERAGE:
        _mean = face_forward(frames, face).mean(dim=0)
        if float(_mean.detach().norm()) == 0.0:
            raise EmbeddingError("Averaged face embedding has zero norm!")
        return _mean

    return face_forward(select_face_frame(frames, rng if rng is not None else np.random.default_rng(0)), face)


@torch.no_grad()
def build_embedding_pool(
    manifest: CorpusManifest,
    face: FaceEncoder,
    split: Optional[Union[SplitEnum, str]] = SplitEnum.TRAIN,
    seed: int = 0,
    face_frames: Union[FaceFramesEnum, str] = FaceFramesEnum.SINGLE,
) -> EmbeddingPool:
    """One face embedding per utterance of `split`; frames drawn from a single `seed`ed generator.

    Speakers with no utterances in `split` are left out with a warning.

    Raises:
        SelectionError: If the split has no utterances.
    """

    _entries = sorted(
        manifest.split_entries(SplitEnum(split) if split is not None else None),
        key=lambda _e: (natural_key(_e.speaker_id), natural_key(_e.utterance_id)),
    )
    if not _entries:
        raise SelectionError(f"Split '{split}' has no utterances to build an embedding pool from!")

    face.eval()
    _device = next(face.parameters()).device
    _rng = np.random.default_rng(seed)
    _embeddings: Dict[str, List[np.ndarray]] = {}
    _ids: Dict[str, List[str]] = {}
    for _entry in _entries:
        _sample = load_utterance(manifest, _entry.speaker_id, _entry.utterance_id)
        _f = resolve_face_embedding(_sample.face_frames.to(_device), face, face_frames, _rng)
        _embeddings.setdefault(_entry.speaker_id, []).append(_f.cpu().numpy())
        _ids.setdefault(_entry.speaker_id, []).append(_entry.utterance_id)

    _absent = [_s for _s in manifest.speakers() if _s not in _embeddings]
    if _absent:
        logger.warning(f"Speakers {_absent} have no '{split}' utterances and are left out of the pool.")

    return EmbeddingPool(
        embeddings={_s: np.stack(_v).astype(np.float32) for _s, _v in _embeddings.items()},
        utterance_ids=_ids,
    )


@dataclass(frozen=True)
class I2ISelection:
    embedding: np.ndarray
    speaker_id: str
    utterance_id: str
    index: int
    negative_speaker: str
    ratio: float


def i2i_select(pool: EmbeddingPool, target_speaker: str, halve: bool = False) -> I2ISelection:
    """Pick the target speaker's most representative face embedding by inter-to-intra distance.

    The negative speaker is the one whose average embedding is nearest the target's average.
    Each candidate `f` scores `||avg_N - avg_T|| / mean_x ||f - x||` over the target's
    embeddings `x`; the highest score wins, ties going to the first utterance id in natural order (`u2` before `u10`).

    Args:
        pool           (EmbeddingPool, required): Embedding pool with >= 2 speakers.
        target_speaker (str          , required): Speaker to select for.
        halve          (bool         , optional): Scale the selected embedding by 1/2. Defaults to False.

    Raises:
        SelectionError: If the pool has < 2 speakers or lacks the target.

    Returns:
        I2ISelection: Selected embedding and how it was chosen.
    """

    if len(pool.speakers) < 2:
        raise SelectionError("I2I selection needs at least 2 speakers in the pool (no negative speaker)!")

    if target_speaker not in pool.embeddings:
        raise SelectionError(f"Speaker '{target_speaker}' isn't in the embedding pool!")

    _target_avg = pool.averages[target_speaker]
    _others = [_s for _s in pool.speakers if _s != target_speaker]
    _inter = [float(np.linalg.norm(pool.averages[_s] - _target_avg)) for _s in _others]
    _negative = _others[int(np.argmin(_inter))]
    _numerator = min(_inter)

    _candidates = pool.embeddings[target_speaker].astype(np.float64)
    _pairwise = np.linalg.norm(_candidates[:, None, :] - _candidates[None, :, :], axis=-1)
    _intra = _pairwise.mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        _ratios = np.where(_intra > 0, _numerator / np.where(_intra > 0, _intra, 1.0), np.inf)

    _best = np.max(_ratios)
    _ids = pool.utterance_ids[target_speaker]
    _index = min((_i for _i in range(len(_ids)) if _ratios[_i] == _best), key=lambda _i: natural_key(_ids[_i]))
    _embedding = pool.embeddings[target_speaker][_index].copy()
    if halve:
        _embedding = _embedding * 0.5

    logger.debug(
        f"I2I for '{target_speaker}': negative speaker '{_negative}', picked '{_ids[_index]}' (ratio {_best:.4f})."
    )
    return I2ISelection(
        embedding=_embedding.astype(np.float32),
        speaker_id=target_speaker,
        utterance_id=_ids[_index],
        index=_index,
        negative_speaker=_negative,
        ratio=float(_best),
    )


def _split_id(pair: str) -> List[str]:
    _parts = pair.strip("/").split("/")
    if len(_parts) != 2 or not all(_parts):
        raise SelectionError(f"'{pair}' must look like 'speaker/utterance'!")
    return _parts


class SynthesisRequest(BaseModel):
    """Lip source plus exactly one face source."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    lips: str
    face_speaker: Optional[str] = None
    face_utterance: Optional[str] = None
    face_image: Optional[str] = None
    face_embedding: Optional[str] = None
    output_stem: Optional[str] = None

    @model_validator(mode="after")
    def _check_face_source(self) -> "SynthesisRequest":
        _split_id(self.lips)
        _sources = [
            _name
            for _name in ("face_speaker", "face_utterance", "face_image", "face_embedding")
            if getattr(self, _name)
        ]
        if len(_sources) != 1:
            raise ValueError(f"Synthesis needs exactly one face source, got {_sources or 'none'}!")

        return self

    @classmethod
    def create(cls, **kwargs) -> "SynthesisRequest":
        """Build a request, reporting an invalid one as `SelectionError`."""

        try:
            return cls(**kwargs)
        except ValidationError as err:
            raise SelectionError(f"Invalid synthesis request: {err.errors()[0]['msg']}") from err

    @property
    def stem(self) -> str:
        if self.output_stem:
            return self.output_stem

        _lips = self.lips.strip("/").replace("/", "_")
        if self.face_speaker:
            _face = f"spk-{self.face_speaker}"
        elif self.face_utterance:
            _face = "utt-" + self.face_utterance.strip("/").replace("/", "_")
        elif self.face_image:
            _face = "img-" + os.path.splitext(os.path.basename(self.face_image))[0]
        else:
            _face = "emb-" + os.path.splitext(os.path.basename(self.face_embedding))[0]
        return f"{_lips}__{_face}"


@dataclass
class SynthesisResult:
    mel: MelSpectrogram
    waveform: np.ndarray
    face_embedding: np.ndarray
    mel_path: Optional[str] = None
    wav_path: Optional[str] = None


def load_face_image(file_path: str, channels: int) -> torch.Tensor:
    """Face frames [K, C, S, S] in [0, 1] from a `.npy` or `.npz` holding [C, S, S] or [K, C, S, S]."""

    if file_path.endswith(".npz"):
        with np.load(file_path, allow_pickle=False) as _npz:
            _array = _npz["frames" if "frames" in _npz.files else _npz.files[0]]
    else:
        _array = np.load(file_path, allow_pickle=False)

    if _array.ndim == 3:
        _array = _array[None]

    if (_array.ndim != 4) or (_array.shape[1] != channels):
        raise ShapeError(f"Face image '{file_path}' must be [C, S, S] or [K, C, S, S], got {_array.shape}!")

    _frames = _array.astype(np.float32) / 255.0 if _array.dtype == np.uint8 else _array.astype(np.float32)
    return torch.from_numpy(np.clip(_frames, 0.0, 1.0))


def load_inference_modules(
    config: FacevoxConfig, checkpoint_paths: Sequence[Union[str, os.PathLike]]
) -> Dict[str, nn.Module]:
    """Modules for synthesis/evaluation from checkpoint files (later files win), all frozen."""

    _checkpoints = [load_checkpoint(_path) for _path in checkpoint_paths]
    _modules, _missing = load_stage_modules(config, _checkpoints)
    _device = torch.device(config.train.device)
    for _module in _modules.values():
        freeze(_module.to(_device))

    if _missing:
        logger.warning(f"Inference runs with untrained {_missing} modules.")

    return _modules


@torch.no_grad()
def synthesize(
    request: SynthesisRequest,
    modules: Mapping[str, nn.Module],
    manifest: CorpusManifest,
    config: FacevoxConfig,
    pool: Optional[EmbeddingPool] = None,
    output_dir: Optional[str] = None,
) -> SynthesisResult:
    """Lips -> lip embeddings, face source -> face embedding, condition -> mel -> Griffin-Lim waveform.

    Writes `<stem>.mel.npz` and `<stem>.wav` (16-bit PCM) under `output_dir` when given.
    """

    _lip, _face, _generator = modules["lip"], modules["face"], modules["generator"]
    for _module in (_lip, _face, _generator):
        _module.eval()
    _device = next(_generator.parameters()).device
    _infer = config.infer

    _speaker, _utterance = _split_id(request.lips)
    _sample = load_utterance(manifest, _speaker, _utterance)
    _lip_seq = lip_forward(_sample.lip_frames.to(_device), _lip)

    _rng = np.random.default_rng(_infer.pool_seed)
    if request.face_embedding:
        _f = torch.from_numpy(np.load(request.face_embedding, allow_pickle=False).astype(np.float32))
        if tuple(_f.shape) != (config.model.face_dim,):
            raise ShapeError(f"Face embedding must be [{config.model.face_dim}], got {tuple(_f.shape)}!")
        _f = _f.to(_device)
    elif request.face_speaker:
        if pool is None:
            pool = build_embedding_pool(manifest, _face, _infer.pool_split, _infer.pool_seed, _infer.face_frames)
        _selection = i2i_select(pool, request.face_speaker, halve=_infer.halve_i2i)
        _f = torch.from_numpy(_selection.embedding).to(_device)
    else:
        if request.face_utterance:
            _face_frames = load_utterance(manifest, *_split_id(request.face_utterance)).face_frames
        else:
            _face_frames = load_face_image(request.face_image, config.video.channels)
        _f = resolve_face_embedding(_face_frames.to(_device), _face, _infer.face_frames, _rng)

    _mel_values = generate_mel(concat_condition(_lip_seq, _f), _generator).cpu().numpy()
    _mel = MelSpectrogram.from_array(_mel_values, config.audio)
    _waveform = griffin_lim(_mel, config.audio, _infer.griffin_lim_iters, seed=_infer.pool_seed)
    _result = SynthesisResult(mel=_mel, waveform=_waveform, face_embedding=_f.cpu().numpy())

    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        _result.mel_path = os.path.join(output_dir, f"{request.stem}.mel.npz")
        _result.wav_path = os.path.join(output_dir, f"{request.stem}.wav")
        save_npz(_result.mel_path, mel=_mel.values)
        write_wav(_result.wav_path, _waveform, config.audio.sample_rate)
        logger.success(f"Synthesized '{request.lips}' -> '{_result.wav_path}'.")

    return _result


__all__ = [
    "EmbeddingPool",
    "resolve_face_embedding",
    "build_embedding_pool",
    "I2ISelection",
    "i2i_select",
    "SynthesisRequest",
    "SynthesisResult",
    "load_face_image",
    "load_inference_modules",
    "synthesize",
]
