# -*- coding: utf-8 -*-

## Standard libraries
import os
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

## Third-party libraries
import numpy as np
import torch
import torch.nn as nn
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from sklearn.decomposition import PCA
from sklearn.manifold import TSNE

## Internal modules
from ._consts import REPORT_SCHEMA_VERSION, SplitEnum, UnitEnum
from ._exceptions import EvaluationError
from ._schemas import FacevoxConfig
from ._corpus import CorpusManifest, UtteranceSample, load_utterance
from ._audio import compute_mel
from ._lip import ctc_logits, greedy_decode, lip_forward
from ._face import face_forward, select_face_frame
from ._decoder import concat_condition, generate_mel
from ._metrics import edit_distance_rate, mel_l1, silhouette
from ._checkpoint import Checkpoint
from ._train import config_hash, freeze, load_stage_modules, pretrain_face
from ._utils import ensure_dir, state_dict_hash


Decoder = Callable[[UtteranceSample], str]


class UtteranceRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    speaker_id: str
    utterance_id: str
    transcript: str
    hypothesis: str
    cer: float
    wer: float
    mel_l1: float


class GroupBreakdown(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_utterances: int
    cer: float
    wer: float
    mel_l1: float


class EvalReport(BaseModel):
    """Machine-readable evaluation report (schema v1).

    CER/WER come from the lip encoder's own greedy decoding, an intelligibility proxy
    not comparable with external-ASR numbers.
    """

    model_config = ConfigDict(extra="forbid")

    schema_version: int = REPORT_SCHEMA_VERSION
    split: str
    n_utterances: int
    cer: float = Field(..., ge=0)
    wer: float = Field(..., ge=0)
    silhouette: Optional[float] = Field(None, ge=-1, le=1)
    mel_l1: float = Field(..., ge=0)
    per_speaker: Dict[str, GroupBreakdown] = {}
    groups: Dict[str, GroupBreakdown] = {}
    rows: List[UtteranceRow] = []
    config_hash: str = ""
    checkpoint_hashes: Dict[str, str] = {}
    projection_path: Optional[str] = None


def _breakdown(rows: Sequence[UtteranceRow]) -> GroupBreakdown:
    return GroupBreakdown(
        n_utterances=len(rows),
        cer=float(np.mean([_r.cer for _r in rows])),
        wer=float(np.mean([_r.wer for _r in rows])),
        mel_l1=float(np.mean([_r.mel_l1 for _r in rows])),
    )


def project_2d(
    embeddings: Union[np.ndarray, Sequence],
    labels: Sequence,
    out_path: Optional[Union[str, os.PathLike]] = None,
    seed: int = 0,
    perplexity: float = 10.0,
    title: str = "face embeddings",
) -> np.ndarray:
    """2-D t-SNE projection (PCA when the points span fewer than 2 dimensions or are too few).

    Writes a scatter plot coloured by label to `out_path` when given.

    Raises:
        EvaluationError: If there are fewer than 3 points.

    Returns:
        np.ndarray: [N, 2] coordinates.
    """

    _x = np.asarray(
        [_e.detach().cpu().numpy() if torch.is_tensor(_e) else np.asarray(_e) for _e in embeddings],
        dtype=np.float64,
    )
    _labels = [str(_l) for _l in labels]
    if _x.shape[0] < 3:
        raise EvaluationError(f"Projection needs >= 3 points, got {_x.shape[0]}!")

    _rank = np.linalg.matrix_rank(_x - _x.mean(axis=0)) if _x.shape[1] > 0 else 0
    if (_rank >= 2) and (_x.shape[0] > 4):
        _perplexity = float(min(perplexity, (_x.shape[0] - 1) / 3.0))
        _coords = TSNE(n_components=2, perplexity=_perplexity, init="pca", random_state=seed).fit_transform(_x)
    else:
        logger.debug(f"Projecting {_x.shape[0]} points of rank {_rank} with PCA.")
        _n = max(1, min(2, _x.shape[1], _x.shape[0]))
        _coords = PCA(n_components=_n, svd_solver="full", random_state=seed).fit_transform(_x)
        if _coords.shape[1] < 2:
            _coords = np.hstack([_coords, np.zeros((_coords.shape[0], 2 - _coords.shape[1]))])
        _coords = np.nan_to_num(_coords)

    if out_path:
        _path = os.fspath(out_path)
        ensure_dir(os.path.dirname(os.path.abspath(_path)))
        _fig, _ax = plt.subplots(figsize=(6, 6))
        for _label in sorted(set(_labels)):
            _mask = np.array([_l == _label for _l in _labels])
            _ax.scatter(_coords[_mask, 0], _coords[_mask, 1], s=18, label=_label)
        _ax.set_title(title)
        _ax.legend(fontsize=7, markerscale=0.8, loc="best")
        _fig.tight_layout()
        _fig.savefig(_path, dpi=100)
        plt.close(_fig)

    return _coords


def _greedy(lip: nn.Module) -> Decoder:
    def _decode(sample: UtteranceSample) -> str:
        return greedy_decode(ctc_logits(lip_forward(sample.lip_frames, lip), lip))

    return _decode


@torch.no_grad()
def run_eval(
    manifest: CorpusManifest,
    config: FacevoxConfig,
    modules: Mapping[str, nn.Module],
    split: Optional[Union[SplitEnum, str]] = None,
    decoder: Optional[Decoder] = None,
    output_dir: Optional[str] = None,
) -> EvalReport:
    """Decode, re-synthesise and embed every utterance of `split`; aggregate CER, WER, mel L1 and silhouette.

    Args:
        manifest   (CorpusManifest, required): Corpus.
        config     (FacevoxConfig , required): Configuration (`eval.*` applies).
        modules    (dict          , required): `lip`, `face` and `generator` modules.
        split      (SplitEnum     , optional): Split to evaluate. Defaults to `config.eval.split`.
        decoder    (Callable      , optional): Sample -> hypothesis text. Defaults to lip greedy decoding.
        output_dir (str           , optional): Writes `report.json` and `projection.png` here.

    Raises:
        EvaluationError: If the split has no utterances.

    Returns:
        EvalReport: Aggregates equal the mean of the per-utterance rows.
    """

    _split = SplitEnum(split if split is not None else config.eval.split)
    _entries = sorted(manifest.split_entries(_split), key=lambda _e: (_e.speaker_id, _e.utterance_id))
    if not _entries:
        raise EvaluationError(f"Split '{_split.value}' has no utterances to evaluate!")

    _lip, _face, _generator = modules["lip"], modules["face"], modules["generator"]
    for _module in (_lip, _face, _generator):
        _module.eval()
    _device = next(_generator.parameters()).device
    _decoder = decoder or _greedy(_lip)
    _rng = np.random.default_rng(config.eval.projection_seed)

    _rows: List[UtteranceRow] = []
    _embeddings: List[np.ndarray] = []
    logger.info(f"Evaluating {len(_entries)} '{_split.value}' utterances...")
    for _entry in _entries:
        _sample = load_utterance(manifest, _entry.speaker_id, _entry.utterance_id)
        _sample.lip_frames = _sample.lip_frames.to(_device)
        _hypothesis = _decoder(_sample)
        _f = face_forward(select_face_frame(_sample.face_frames, _rng).to(_device), _face)
        _fake = generate_mel(concat_condition(lip_forward(_sample.lip_frames, _lip), _f), _generator)
        _real = compute_mel(_sample.waveform.numpy(), manifest.audio)
        _rows.append(
            UtteranceRow(
                speaker_id=_entry.speaker_id,
                utterance_id=_entry.utterance_id,
                transcript=_sample.transcript,
                hypothesis=_hypothesis,
                cer=edit_distance_rate(_sample.transcript, _hypothesis, UnitEnum.CHAR),
                wer=edit_distance_rate(_sample.transcript, _hypothesis, UnitEnum.WORD),
                mel_l1=mel_l1(_fake, _real),
            )
        )
        _embeddings.append(_f.cpu().numpy())

    _labels = [_r.speaker_id for _r in _rows]
    try:
        _silhouette = silhouette(_embeddings, _labels)
    except EvaluationError as err:
        logger.warning(f"Silhouette not reported: {err}")
        _silhouette = None

    _projection_path = None
    if output_dir and (len(_rows) >= 3):
        _projection_path = os.path.join(output_dir, "projection.png")
        project_2d(
            _embeddings,
            _labels,
            _projection_path,
            seed=config.eval.projection_seed,
            perplexity=config.eval.perplexity,
            title=f"face embeddings ({_split.value})",
        )

    _overall = _breakdown(_rows)
    _per_speaker = {
        _speaker: _breakdown([_r for _r in _rows if _r.speaker_id == _speaker])
        for _speaker in sorted(set(_labels))
    }
    _groups: Dict[str, GroupBreakdown] = {}
    _unseen = set(manifest.unseen_speakers)
    _unseen_rows = [_r for _r in _rows if _r.speaker_id in _unseen]
    _seen_rows = [_r for _r in _rows if _r.speaker_id not in _unseen]
    if _unseen_rows and _seen_rows:
        _groups = {"seen": _breakdown(_seen_rows), "unseen": _breakdown(_unseen_rows)}

    _report = EvalReport(
        split=_split.value,
        n_utterances=len(_rows),
        cer=_overall.cer,
        wer=_overall.wer,
        silhouette=_silhouette,
        mel_l1=_overall.mel_l1,
        per_speaker=_per_speaker,
        groups=_groups,
        rows=_rows,
        config_hash=config_hash(config),
        checkpoint_hashes={_n: state_dict_hash(_m.state_dict()) for _n, _m in sorted(modules.items())},
        projection_path=_projection_path,
    )

    if output_dir:
        _path = os.path.join(ensure_dir(output_dir), "report.json")
        with open(_path, "w", encoding="utf-8") as _file:
            _file.write(_report.model_dump_json(indent=2))
            _file.write("\n")
        logger.success(f"Evaluation report written to '{_path}'.")

    logger.info(
        f"[eval] {_split.value}: cer={_report.cer:.4f} wer={_report.wer:.4f} mel_l1={_report.mel_l1:.4f} silhouette={_report.silhouette}"
    )
    return _report


class AblationReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int = REPORT_SCHEMA_VERSION
    steps: int
    n_utterances: int
    silhouette_with_cs: float
    silhouette_without_cs: float
    margin: float
    plot_with_cs: Optional[str] = None
    plot_without_cs: Optional[str] = None


@torch.no_grad()
def face_embeddings(
    manifest: CorpusManifest,
    face: nn.Module,
    split: Optional[SplitEnum] = None,
    seed: int = 0,
) -> Dict[str, List]:
    """One seeded-frame face embedding per utterance, with speaker labels."""

    freeze(face)
    _device = next(face.parameters()).device
    _rng = np.random.default_rng(seed)
    _entries = sorted(manifest.split_entries(split), key=lambda _e: (_e.speaker_id, _e.utterance_id))
    _embeddings, _labels = [], []
    for _entry in _entries:
        _sample = load_utterance(manifest, _entry.speaker_id, _entry.utterance_id)
        _embeddings.append(face_forward(select_face_frame(_sample.face_frames, _rng).to(_device), face).cpu().numpy())
        _labels.append(_entry.speaker_id)

    return {"embeddings": _embeddings, "labels": _labels}


def cs_ablation(
    manifest: CorpusManifest,
    config: FacevoxConfig,
    prosody_checkpoint: Checkpoint,
    split: Optional[SplitEnum] = None,
    output_dir: Optional[str] = None,
) -> AblationReport:
    """Train two face encoders with the same seed, one on the CS loss and one with it zeroed,
    and compare the speaker silhouettes of their embeddings over `split` (all utterances by default).
    """

    _steps = config.eval.ablation_steps
    _base_train = config.train.model_copy(update={"max_steps": _steps})
    _with_cfg = config.model_copy(update={"train": _base_train})
    _without_cfg = config.model_copy(
        update={
            "train": _base_train.model_copy(
                update={"loss_weights": _base_train.loss_weights.model_copy(update={"cs": 0.0})}
            )
        }
    )

    _scores = {}
    _plots = {}
    _n = 0
    for _tag, _cfg in (("with_cs", _with_cfg), ("without_cs", _without_cfg)):
        logger.info(f"[ablation] training face encoder {_tag} for {_steps} steps...")
        _run_dir = os.path.join(output_dir, "ablation", _tag) if output_dir else None
        _checkpoint = pretrain_face(manifest, _cfg, prosody_checkpoint, output_dir=_run_dir)
        _modules, _ = load_stage_modules(_cfg, [_checkpoint], names=("face",))
        _data = face_embeddings(manifest, _modules["face"], split, config.eval.projection_seed)
        _n = len(_data["labels"])
        _scores[_tag] = silhouette(_data["embeddings"], _data["labels"])
        if output_dir:
            _plots[_tag] = os.path.join(output_dir, "ablation", f"projection_{_tag}.png")
            project_2d(
                _data["embeddings"],
                _data["labels"],
                _plots[_tag],
                seed=config.eval.projection_seed,
                perplexity=config.eval.perplexity,
                title=f"face embeddings ({_tag.replace('_', ' ')})",
            )

    _report = AblationReport(
        steps=_steps,
        n_utterances=_n,
        silhouette_with_cs=_scores["with_cs"],
        silhouette_without_cs=_scores["without_cs"],
        margin=_scores["with_cs"] - _scores["without_cs"],
        plot_with_cs=_plots.get("with_cs"),
        plot_without_cs=_plots.get("without_cs"),
    )
    if output_dir:
        _path = os.path.join(ensure_dir(os.path.join(output_dir, "ablation")), "ablation.json")
        with open(_path, "w", encoding="utf-8") as _file:
            _file.write(_report.model_dump_json(indent=2))
            _file.write("\n")

    logger.info(
        f"[ablation] silhouette with CS {_report.silhouette_with_cs:.4f}, without {_report.silhouette_without_cs:.4f} (margin {_report.margin:+.4f})."
    )
    return _report


__all__ = [
    "UtteranceRow",
    "GroupBreakdown",
    "EvalReport",
    "project_2d",
    "run_eval",
    "AblationReport",
    "face_embeddings",
    "cs_ablation",
]
