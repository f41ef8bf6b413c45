# -*- coding: utf-8 -*-

## Standard libraries
import os
import csv
import math
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

## Third-party libraries
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from loguru import logger
from torch.utils.data import DataLoader
from tqdm import tqdm

## Internal modules
from ._consts import MODULE_NAMES, SplitEnum, StageEnum
from ._exceptions import CheckpointError, DegenerateTaskError, DivergenceError
from ._schemas import FacevoxConfig, OptimizerConfig
from ._utils import content_hash, ensure_dir, seed_everything
from ._corpus import CorpusManifest, UtteranceDataset, collate_utterances
from ._lip import LipEncoder, ctc_logits, ctc_loss, greedy_decode, lip_forward
from ._face import FaceEncoder, ProsodyEncoder, cs_loss, face_forward, prosody_forward, select_face_index
from ._decoder import (
    Generator,
    LossBundle,
    MultiPeriodDiscriminator,
    MultiScaleDiscriminator,
    concat_condition,
    discriminator_loss,
    feature_matching_loss,
    generate_mel,
    generator_adv_loss,
    mpd_forward,
    msd_forward,
    vocoder_consistency_loss,
)
from ._checkpoint import Checkpoint, apply_checkpoint, capture_rng, save_checkpoint
from ._metrics import edit_distance_rate


_VAL_FACE_SEED = 0xFACE


def config_hash(config: FacevoxConfig) -> str:
    return content_hash(config.model_dump(mode="json"))


def build_modules(
    config: FacevoxConfig, names: Sequence[str] = MODULE_NAMES
) -> Dict[str, nn.Module]:
    """Freshly initialised modules, always constructed in `MODULE_NAMES` order."""

    _factories = {
        "lip": lambda: LipEncoder(config.model, config.video),
        "face": lambda: FaceEncoder(config.model, config.video),
        "prosody": lambda: ProsodyEncoder(config.model, config.audio),
        "generator": lambda: Generator(config.model, config.audio),
        "mpd": lambda: MultiPeriodDiscriminator(config.model, config.audio),
        "msd": lambda: MultiScaleDiscriminator(config.model),
    }
    return {_name: _factories[_name]() for _name in MODULE_NAMES if _name in names}


def load_stage_modules(
    config: FacevoxConfig,
    checkpoints: Sequence[Optional[Checkpoint]],
    names: Sequence[str] = MODULE_NAMES,
) -> Tuple[Dict[str, nn.Module], List[str]]:
    """Build `names` and fill them from `checkpoints` (later ones win).

    Returns:
        Tuple[dict, list]: Modules, and the names no checkpoint provided (left freshly initialised).
    """

    _modules = build_modules(config, names)
    _provided = set()
    for _checkpoint in checkpoints:
        if _checkpoint is None:
            continue

        _subset = {_n: _m for _n, _m in _modules.items() if _n in _checkpoint.modules}
        apply_checkpoint(_checkpoint, _subset)
        _provided.update(_subset)

    _missing = [_name for _name in _modules if _name not in _provided]
    if _missing and any(_c is not None for _c in checkpoints):
        logger.warning(f"No checkpoint state for {_missing}; these modules are freshly initialized.")

    return _modules, _missing


def freeze(module: nn.Module) -> nn.Module:
    module.eval()
    module.requires_grad_(False)
    return module


def snapshot(module: nn.Module) -> Dict[str, torch.Tensor]:
    return {_k: _v.detach().cpu().clone() for _k, _v in module.state_dict().items()}


class MetricsWriter:
    """Append-only CSV; the header is written only when the file is new or empty."""

    def __init__(self, file_path: Optional[Union[str, os.PathLike]], fieldnames: Sequence[str]):
        self.file_path = os.fspath(file_path) if file_path else None
        self.fieldnames = list(fieldnames)
        if self.file_path:
            ensure_dir(os.path.dirname(os.path.abspath(self.file_path)))

    def write(self, row: Mapping[str, Any]) -> None:
        if not self.file_path:
            return

        _is_new = (not os.path.isfile(self.file_path)) or (os.path.getsize(self.file_path) == 0)
        with open(self.file_path, "a", newline="", encoding="utf-8") as _file:
            _writer = csv.DictWriter(_file, fieldnames=self.fieldnames, extrasaction="ignore")
            if _is_new:
                _writer.writeheader()
            _writer.writerow(row)


def epoch_batches(n_items: int, batch_size: int, seed: int, epoch: int) -> List[List[int]]:
    """Shuffled index batches for one epoch; a pure function of (seed, epoch)."""

    _order = np.random.default_rng([seed, epoch]).permutation(n_items).tolist()
    return [_order[_i : _i + batch_size] for _i in range(0, n_items, batch_size)]


def iterate_steps(
    dataset: UtteranceDataset,
    batch_size: int,
    seed: int,
    max_steps: int,
    start_step: int = 0,
    num_workers: int = 0,
    desc: str = "train",
) -> Iterator[Tuple[int, int, Dict[str, Any], bool]]:
    """Yield `(step, epoch, batch, epoch_end)` from `start_step + 1` to `max_steps`."""

    if len(dataset) == 0:
        raise DegenerateTaskError("Train split is empty!")

    _steps_per_epoch = math.ceil(len(dataset) / batch_size)
    _step = start_step
    _epoch = start_step // _steps_per_epoch
    _offset = start_step % _steps_per_epoch
    with tqdm(total=max_steps, initial=start_step, desc=desc, leave=False, disable=None) as _bar:
        while _step < max_steps:
            _batches = epoch_batches(len(dataset), batch_size, seed, _epoch)[_offset:]
            _loader = DataLoader(
                dataset,
                batch_sampler=_batches,
                collate_fn=collate_utterances,
                num_workers=num_workers,
                # own generator: creating the iterator must not draw from the global torch RNG
                generator=torch.Generator().manual_seed(seed + _epoch),
            )
            for _idx, _batch in enumerate(_loader):
                _step += 1
                _bar.update(1)
                yield _step, _epoch, _batch, (_idx == len(_batches) - 1)
                if _step >= max_steps:
                    return
            _epoch += 1
            _offset = 0


def _workers(config: FacevoxConfig) -> int:
    if config.train.deterministic and (config.train.num_workers > 0):
        logger.warning("Deterministic mode loads data in the main process; ignoring num_workers.")
        return 0

    return config.train.num_workers


def _adam(params, optimizer_cfg: OptimizerConfig, lr: Optional[float] = None) -> torch.optim.Adam:
    return torch.optim.Adam(
        params,
        lr=lr if lr is not None else optimizer_cfg.lr,
        betas=tuple(optimizer_cfg.betas),
        weight_decay=optimizer_cfg.weight_decay,
    )


def check_finite(terms: Mapping[str, torch.Tensor], step: int) -> None:
    for _name, _value in terms.items():
        if not bool(torch.isfinite(_value).all()):
            _error = DivergenceError(_name, step, float(_value.detach().float().mean()))
            logger.error(str(_error))
            raise _error


def pick_faces(face_frames: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """One uniformly drawn frame per item of [B, K, C, S, S]."""

    _b, _k = face_frames.shape[:2]
    _idx = torch.tensor([select_face_index(_k, rng) for _ in range(_b)], dtype=torch.long)
    return face_frames[torch.arange(_b), _idx]


def _stage_paths(output_dir: Optional[str], stage: StageEnum) -> Tuple[Optional[str], Optional[str]]:
    if not output_dir:
        return None, None

    return (
        os.path.join(output_dir, "checkpoints", f"{stage.value}.ckpt"),
        os.path.join(output_dir, "metrics", f"{stage.value}.csv"),
    )


def _make_checkpoint(
    stage: StageEnum,
    step: int,
    config: FacevoxConfig,
    modules: Mapping[str, Dict[str, torch.Tensor]],
    optimizers: Optional[Mapping[str, torch.optim.Optimizer]] = None,
    schedulers: Optional[Mapping[str, Any]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Checkpoint:
    return Checkpoint(
        stage=stage,
        step=step,
        config_hash=config_hash(config),
        modules=dict(modules),
        optimizers={_n: _o.state_dict() for _n, _o in (optimizers or {}).items()},
        schedulers={_n: _s.state_dict() for _n, _s in (schedulers or {}).items()},
        rng=capture_rng(),
        extra=extra or {},
    )


def _finish(checkpoint: Checkpoint, checkpoint_path: Optional[str]) -> Checkpoint:
    if checkpoint_path:
        save_checkpoint(checkpoint, checkpoint_path)
        logger.success(f"'{checkpoint.stage.value}' finished at step {checkpoint.step}: '{checkpoint_path}'")

    return checkpoint


def pretrain_prosody(
    manifest: CorpusManifest,
    config: FacevoxConfig,
    modules: Optional[Dict[str, nn.Module]] = None,
    output_dir: Optional[str] = None,
) -> Checkpoint:
    """Train the prosody (reference) encoder with a speaker-classification head, then freeze it.

    The head is discarded; the checkpoint holds only `prosody` and reports val speaker accuracy.

    Raises:
        DegenerateTaskError: If the train split has fewer than 2 speakers.
    """

    _speakers = manifest.speakers(SplitEnum.TRAIN)
    if len(_speakers) < 2:
        raise DegenerateTaskError(
            f"Speaker classification needs >= 2 train speakers, corpus has {len(_speakers)}!"
        )

    _cfg = config.prosody
    _device = torch.device(config.train.device)
    seed_everything(_cfg.seed, config.train.deterministic)
    _modules = modules if modules is not None else build_modules(config, ("prosody",))
    _prosody = _modules["prosody"].to(_device)
    _head = nn.Linear(config.model.face_dim, len(_speakers)).to(_device)
    _optimizer = torch.optim.Adam(list(_prosody.parameters()) + list(_head.parameters()), lr=_cfg.lr)

    _ckpt_path, _metrics_path = _stage_paths(output_dir, StageEnum.PRETRAIN_PROSODY)
    _writer = MetricsWriter(_metrics_path, ["step", "epoch", "speaker_ce"])
    _dataset = UtteranceDataset(manifest, SplitEnum.TRAIN, speakers=_speakers)
    logger.info(f"Pretraining prosody encoder on {len(_dataset)} utterances, {len(_speakers)} speakers...")

    _prosody.train()
    _step = 0
    for _step, _epoch, _batch, _ in iterate_steps(
        _dataset, _cfg.batch_size, _cfg.seed, _cfg.max_steps, 0, _workers(config), "pretrain-prosody"
    ):
        _logits = _head(prosody_forward(_batch["mel"].to(_device), _prosody))
        _loss = F.cross_entropy(_logits, _batch["speaker_index"].to(_device))
        check_finite({"speaker_ce": _loss}, _step)
        _optimizer.zero_grad()
        _loss.backward()
        _optimizer.step()

        _writer.write({"step": _step, "epoch": _epoch, "speaker_ce": float(_loss)})
        if _step % config.train.log_every == 0:
            logger.info(f"[pretrain_prosody] step {_step}: speaker_ce={float(_loss):.4f}")

    freeze(_prosody)
    _accuracy = speaker_accuracy(_prosody, _head, manifest, SplitEnum.VAL, _speakers, _device)
    if _accuracy is None:
        logger.warning("No val utterances of train speakers; speaker accuracy not reported.")
    else:
        logger.info(f"[pretrain_prosody] val speaker accuracy: {_accuracy:.3f}")

    _checkpoint = _make_checkpoint(
        StageEnum.PRETRAIN_PROSODY,
        _step,
        config,
        {"prosody": snapshot(_prosody)},
        extra={"val_accuracy": _accuracy, "speakers": _speakers},
    )
    return _finish(_checkpoint, _ckpt_path)


@torch.no_grad()
def speaker_accuracy(
    prosody: ProsodyEncoder,
    head: nn.Module,
    manifest: CorpusManifest,
    split: SplitEnum,
    speakers: List[str],
    device: torch.device = torch.device("cpu"),
) -> Optional[float]:
    _dataset = UtteranceDataset(manifest, split, speakers=speakers)
    _correct = 0
    _total = 0
    for _item in (_dataset[_i] for _i in range(len(_dataset))):
        if _item["speaker_index"] < 0:
            continue
        _embedding = prosody_forward(_item["mel"].to(device), prosody)
        _correct += int(int(head(_embedding).argmax()) == _item["speaker_index"])
        _total += 1

    return (_correct / _total) if _total else None


def pretrain_lip(
    manifest: CorpusManifest,
    config: FacevoxConfig,
    modules: Optional[Dict[str, nn.Module]] = None,
    output_dir: Optional[str] = None,
) -> Checkpoint:
    """Optimise the lip encoder and its grapheme head on CTC only; keep the best-val-CER parameters."""

    _device = torch.device(config.train.device)
    _cfg = config.train
    seed_everything(_cfg.seed, _cfg.deterministic)
    _modules = modules if modules is not None else build_modules(config, ("lip",))
    _lip = _modules["lip"].to(_device)
    _optimizer = _adam(_lip.parameters(), _cfg.optimizer)
    _scheduler = torch.optim.lr_scheduler.ExponentialLR(_optimizer, gamma=_cfg.optimizer.lr_decay)

    _ckpt_path, _metrics_path = _stage_paths(output_dir, StageEnum.PRETRAIN_LIP)
    _writer = MetricsWriter(_metrics_path, ["step", "epoch", "ctc", "val_cer"])
    _train_set = UtteranceDataset(manifest, SplitEnum.TRAIN)
    _val_set = UtteranceDataset(manifest, SplitEnum.VAL)
    logger.info(f"Pretraining lip encoder (CTC) on {len(_train_set)} utterances...")

    _best_state = snapshot(_lip)
    _best_cer = math.inf
    _step = 0
    _epoch = 0
    _lip.train()
    for _step, _epoch, _batch, _epoch_end in iterate_steps(
        _train_set, _cfg.batch_size, _cfg.seed, _cfg.max_steps, 0, _workers(config), "pretrain-lip"
    ):
        _logits = ctc_logits(lip_forward(_batch["lip_frames"].to(_device), _lip), _lip)
        _loss = ctc_loss(_logits, _batch["targets"], _batch["target_lengths"], reduction="mean")
        check_finite({"ctc": _loss}, _step)
        _optimizer.zero_grad()
        _loss.backward()
        _optimizer.step()

        _row = {"step": _step, "epoch": _epoch, "ctc": float(_loss), "val_cer": ""}
        if _epoch_end or (_step == _cfg.max_steps):
            if _epoch_end:
                _scheduler.step()
            _cer = lip_cer(_lip, _val_set, _device)
            _lip.train()
            _row["val_cer"] = "" if _cer is None else _cer
            if (_cer is None) or (_cer < _best_cer):
                _best_cer = math.inf if _cer is None else _cer
                _best_state = snapshot(_lip)
            logger.info(f"[pretrain_lip] epoch {_epoch} step {_step}: ctc={float(_loss):.4f} val_cer={_cer}")
        elif _step % _cfg.log_every == 0:
            logger.info(f"[pretrain_lip] step {_step}: ctc={float(_loss):.4f}")
        _writer.write(_row)

    _checkpoint = _make_checkpoint(
        StageEnum.PRETRAIN_LIP,
        _step,
        config,
        {"lip": _best_state},
        {"lip": _optimizer},
        {"lip": _scheduler},
        extra={"val_cer": None if math.isinf(_best_cer) else _best_cer, "epoch": _epoch},
    )
    return _finish(_checkpoint, _ckpt_path)


@torch.no_grad()
def lip_cer(lip: LipEncoder, dataset: UtteranceDataset, device: torch.device = torch.device("cpu")) -> Optional[float]:
    """Mean greedy-decode character error rate over `dataset` (None when empty)."""

    if len(dataset) == 0:
        return None

    lip.eval()
    _rates = []
    for _i in range(len(dataset)):
        _item = dataset[_i]
        _hypothesis = greedy_decode(ctc_logits(lip_forward(_item["lip_frames"].to(device), lip), lip))
        _rates.append(edit_distance_rate(_item["transcript"], _hypothesis, "char"))

    return float(np.mean(_rates))


@torch.no_grad()
def val_cs_loss(
    face: FaceEncoder,
    prosody: ProsodyEncoder,
    dataset: UtteranceDataset,
    seed: int,
    device: torch.device = torch.device("cpu"),
) -> Optional[float]:
    if len(dataset) == 0:
        return None

    face.eval()
    _rng = np.random.default_rng([seed, _VAL_FACE_SEED])
    _losses = []
    for _i in range(len(dataset)):
        _item = dataset[_i]
        _frames = _item["face_frames"]
        _f = face_forward(_frames[select_face_index(_frames.shape[0], _rng)].to(device), face)
        _p = prosody_forward(_item["mel"].to(device), prosody)
        _losses.append(float(cs_loss(_f, _p)))

    return float(np.mean(_losses))


def pretrain_face(
    manifest: CorpusManifest,
    config: FacevoxConfig,
    prosody: Union[Checkpoint, ProsodyEncoder],
    modules: Optional[Dict[str, nn.Module]] = None,
    output_dir: Optional[str] = None,
) -> Checkpoint:
    """Optimise the face encoder on the CS loss against a frozen prosody encoder.

    Stops when the val CS loss hasn't improved for `train.patience` epochs (or at
    `train.max_steps`); the best-val face parameters are kept. The checkpoint holds
    `face` and the (unchanged) `prosody` state.
    """

    _device = torch.device(config.train.device)
    _cfg = config.train
    seed_everything(_cfg.seed, _cfg.deterministic)
    _modules = modules if modules is not None else build_modules(config, ("face", "prosody"))
    if isinstance(prosody, Checkpoint):
        if "prosody" not in prosody.modules:
            raise CheckpointError(f"'{prosody.stage.value}' checkpoint has no prosody encoder!")
        apply_checkpoint(prosody, {"prosody": _modules["prosody"]})
    else:
        _modules["prosody"] = prosody

    _prosody = freeze(_modules["prosody"].to(_device))
    _face = _modules["face"].to(_device)
    _optimizer = _adam(_face.parameters(), _cfg.optimizer)
    _scheduler = torch.optim.lr_scheduler.ExponentialLR(_optimizer, gamma=_cfg.optimizer.lr_decay)
    _weight = _cfg.loss_weights.cs

    _ckpt_path, _metrics_path = _stage_paths(output_dir, StageEnum.PRETRAIN_FACE)
    _writer = MetricsWriter(_metrics_path, ["step", "epoch", "cs", "val_cs"])
    _train_set = UtteranceDataset(manifest, SplitEnum.TRAIN)
    _val_set = UtteranceDataset(manifest, SplitEnum.VAL)
    logger.info(f"Pretraining face encoder (CS loss x {_weight}) on {len(_train_set)} utterances...")

    _initial_val = val_cs_loss(_face, _prosody, _val_set, _cfg.seed, _device)
    _best_val = math.inf
    _best_state = snapshot(_face)
    _history: List[float] = []
    _epoch_losses: List[float] = []
    _bad_epochs = 0
    _stopped_early = False
    _step = 0
    _face.train()
    for _step, _epoch, _batch, _epoch_end in iterate_steps(
        _train_set, _cfg.batch_size, _cfg.seed, _cfg.max_steps, 0, _workers(config), "pretrain-face"
    ):
        _rng = np.random.default_rng([_cfg.seed, _step])
        _f = face_forward(pick_faces(_batch["face_frames"], _rng).to(_device), _face)
        with torch.no_grad():
            _p = prosody_forward(_batch["mel"].to(_device), _prosody)
        _loss = cs_loss(_f, _p)
        check_finite({"cs": _loss}, _step)
        _optimizer.zero_grad()
        (_weight * _loss).backward()
        _optimizer.step()
        _epoch_losses.append(float(_loss))

        _row = {"step": _step, "epoch": _epoch, "cs": float(_loss), "val_cs": ""}
        if _epoch_end:
            _scheduler.step()
            _val = val_cs_loss(_face, _prosody, _val_set, _cfg.seed, _device)
            _face.train()
            if _val is None:
                _val = float(np.mean(_epoch_losses))
            _epoch_losses = []
            _history.append(_val)
            _row["val_cs"] = _val
            if _val < _best_val:
                _best_val = _val
                _best_state = snapshot(_face)
                _bad_epochs = 0
            else:
                _bad_epochs += 1
            logger.info(f"[pretrain_face] epoch {_epoch}: val_cs={_val:.4f} (best {_best_val:.4f})")
        _writer.write(_row)

        if _bad_epochs >= _cfg.patience:
            _stopped_early = True
            logger.info(f"[pretrain_face] val CS loss stalled for {_bad_epochs} epoch(s), stopping at step {_step}.")
            break

    if not _history:
        _best_state = snapshot(_face)

    _checkpoint = _make_checkpoint(
        StageEnum.PRETRAIN_FACE,
        _step,
        config,
        {"face": _best_state, "prosody": snapshot(_prosody)},
        {"face": _optimizer},
        {"face": _scheduler},
        extra={
            "initial_val_cs": _initial_val,
            "best_val_cs": None if math.isinf(_best_val) else _best_val,
            "history": _history,
            "epochs": len(_history),
            "stopped_early": _stopped_early,
        },
    )
    return _finish(_checkpoint, _ckpt_path)


@torch.no_grad()
def val_mel_l1(
    modules: Mapping[str, nn.Module],
    dataset: UtteranceDataset,
    seed: int,
    device: torch.device = torch.device("cpu"),
) -> Optional[float]:
    """Mean L1 between generated and real val mels, single seeded face frame per utterance."""

    if len(dataset) == 0:
        return None

    _lip, _face, _generator = modules["lip"], modules["face"], modules["generator"]
    _modes = {_name: modules[_name].training for _name in ("lip", "face", "generator")}
    for _module in (_lip, _face, _generator):
        _module.eval()

    _rng = np.random.default_rng([seed, _VAL_FACE_SEED])
    _values = []
    for _i in range(len(dataset)):
        _item = dataset[_i]
        _frames = _item["face_frames"]
        _f = face_forward(_frames[select_face_index(_frames.shape[0], _rng)].to(device), _face)
        _fake = generate_mel(concat_condition(lip_forward(_item["lip_frames"].to(device), _lip), _f), _generator)
        _values.append(float(F.l1_loss(_fake, _item["mel"].to(device))))

    for _name, _training in _modes.items():
        modules[_name].train(_training)

    return float(np.mean(_values))


_JOINT_FIELDS = ["step", "epoch", "adv_gen", "adv_disc", "feature_match", "mel_l1", "cs", "vocoder", "total", "val_mel_l1"]


def train_joint(
    manifest: CorpusManifest,
    config: FacevoxConfig,
    lip_checkpoint: Optional[Checkpoint] = None,
    face_checkpoint: Optional[Checkpoint] = None,
    prosody_checkpoint: Optional[Checkpoint] = None,
    resume: Optional[Checkpoint] = None,
    modules: Optional[Dict[str, nn.Module]] = None,
    output_dir: Optional[str] = None,
    batch_indices: Optional[List[int]] = None,
) -> Checkpoint:
    """End-to-end training of the decoder path against adversarial, feature-matching, mel, CS
    and (optional) vocoder-consistency losses, alternating discriminator and generator updates.

    Args:
        manifest           (CorpusManifest, required): Corpus.
        config             (FacevoxConfig , required): Full configuration (`train.*` drives this stage).
        lip_checkpoint     (Checkpoint    , optional): `pretrain_lip` result.
        face_checkpoint    (Checkpoint    , optional): `pretrain_face` result (also carries the prosody encoder).
        prosody_checkpoint (Checkpoint    , optional): Explicit prosody encoder; overrides the one in `face_checkpoint`.
        resume             (Checkpoint    , optional): Earlier `joint` checkpoint to continue bit-identically.
        modules            (dict          , optional): Pre-built modules, used as-is.
        output_dir         (str           , optional): Where checkpoints and `metrics/joint.csv` go.
        batch_indices      (List[int]     , optional): Train on this fixed batch of train-split indices every step.

    Raises:
        CheckpointError: If neither pretraining checkpoints, `resume`, nor `modules` are given.
        DivergenceError: If any loss term becomes non-finite (names the term).

    Returns:
        Checkpoint: Final joint-stage checkpoint (all six modules, optimisers, schedulers, RNG).
    """

    _cfg = config.train
    _device = torch.device(_cfg.device)
    if (resume is None) and (modules is None) and ((lip_checkpoint is None) or (face_checkpoint is None)):
        raise CheckpointError("Joint training needs both the pretrain_lip and pretrain_face checkpoints!")

    if (resume is not None) and (resume.stage != StageEnum.JOINT):
        raise CheckpointError(f"Can only resume from a 'joint' checkpoint, got '{resume.stage.value}'!")

    seed_everything(_cfg.seed, _cfg.deterministic)
    if modules is not None:
        _modules, _missing = modules, []
    else:
        _modules, _missing = load_stage_modules(config, [lip_checkpoint, face_checkpoint, prosody_checkpoint])
    for _module in _modules.values():
        _module.to(_device)

    _lip, _face, _prosody = _modules["lip"], _modules["face"], _modules["prosody"]
    _generator, _mpd, _msd = _modules["generator"], _modules["mpd"], _modules["msd"]
    freeze(_prosody)
    _trainable = ["generator", "mpd", "msd"]
    if _cfg.finetune_lip:
        _trainable.append("lip")
    else:
        freeze(_lip)
    if _cfg.freeze_face:
        freeze(_face)
    else:
        _trainable.append("face")
    for _name in _trainable:
        _modules[_name].train()

    _g_params = [_p for _n in ("generator", "face", "lip") if _n in _trainable for _p in _modules[_n].parameters()]
    _opt_g = _adam(_g_params, _cfg.optimizer)
    _opt_d = _adam(list(_mpd.parameters()) + list(_msd.parameters()), _cfg.optimizer)
    _sched_g = torch.optim.lr_scheduler.ExponentialLR(_opt_g, gamma=_cfg.optimizer.lr_decay)
    _sched_d = torch.optim.lr_scheduler.ExponentialLR(_opt_d, gamma=_cfg.optimizer.lr_decay)
    _optimizers = {"generator": _opt_g, "discriminator": _opt_d}
    _schedulers = {"generator": _sched_g, "discriminator": _sched_d}

    _train_set = UtteranceDataset(manifest, SplitEnum.TRAIN)
    _val_set = UtteranceDataset(manifest, SplitEnum.VAL)
    if batch_indices is not None:
        _train_set.entries = [_train_set.entries[_i] for _i in batch_indices]
        _val_set.entries = []

    _start_step = 0
    _extra: Dict[str, Any] = {"history": [], "missing_modules": _missing, "stopped_early": False}
    if resume is not None:
        apply_checkpoint(resume, _modules, _optimizers, _schedulers, restore_rng_state=True)
        _start_step = resume.step
        _extra = dict(resume.extra)
        logger.info(f"Resuming joint training from step {_start_step}.")
    else:
        _extra["val_mel_l1_initial"] = val_mel_l1(_modules, _val_set, _cfg.seed, _device)

    _ckpt_path, _metrics_path = _stage_paths(output_dir, StageEnum.JOINT)
    _writer = MetricsWriter(_metrics_path, _JOINT_FIELDS)
    _weights = _cfg.loss_weights
    _batch_size = len(_train_set) if batch_indices is not None else _cfg.batch_size
    logger.info(
        f"Joint training on {len(_train_set)} utterances (trainable: {_trainable}) up to step {_cfg.max_steps}..."
    )

    _step = _start_step
    _epoch = 0
    for _step, _epoch, _batch, _epoch_end in iterate_steps(
        _train_set, _batch_size, _cfg.seed, _cfg.max_steps, _start_step, _workers(config), "joint"
    ):
        _real = _batch["mel"].to(_device)
        with torch.set_grad_enabled(_cfg.finetune_lip):
            _lip_seq = lip_forward(_batch["lip_frames"].to(_device), _lip)
        _faces = pick_faces(_batch["face_frames"], np.random.default_rng([_cfg.seed, _step])).to(_device)
        with torch.set_grad_enabled(not _cfg.freeze_face):
            _f = face_forward(_faces, _face)
        _fake = generate_mel(concat_condition(_lip_seq, _f), _generator)

        _d_real = mpd_forward(_real, _mpd) + msd_forward(_real, _msd)
        _d_fake = mpd_forward(_fake.detach(), _mpd) + msd_forward(_fake.detach(), _msd)
        _adv_disc = discriminator_loss(_d_real, _d_fake)
        check_finite({"adv_disc": _adv_disc}, _step)
        _opt_d.zero_grad()
        _adv_disc.backward()
        _opt_d.step()

        with torch.no_grad():
            _d_real = mpd_forward(_real, _mpd) + msd_forward(_real, _msd)
            _p = prosody_forward(_real, _prosody)
        _d_fake = mpd_forward(_fake, _mpd) + msd_forward(_fake, _msd)
        _zero = torch.zeros((), device=_device)
        _bundle = LossBundle(
            adv_gen=generator_adv_loss(_d_fake),
            adv_disc=_adv_disc.detach(),
            feature_match=feature_matching_loss(_d_real, _d_fake),
            mel_l1=F.l1_loss(_fake, _real),
            cs=cs_loss(_f, _p),
            vocoder=(
                vocoder_consistency_loss(_fake, _batch["waveform"].to(_device), config.audio)
                if _weights.vocoder > 0
                else _zero
            ),
            weights=_weights,
        )
        check_finite(
            {
                "adv_gen": _bundle.adv_gen,
                "feature_match": _bundle.feature_match,
                "mel_l1": _bundle.mel_l1,
                "cs": _bundle.cs,
                "vocoder": _bundle.vocoder,
            },
            _step,
        )
        _opt_g.zero_grad()
        _bundle.generator_objective.backward()
        _opt_g.step()

        _row = {"step": _step, "epoch": _epoch, **_bundle.as_row(), "val_mel_l1": ""}
        if _epoch_end:
            _sched_g.step()
            _sched_d.step()
            _val = val_mel_l1(_modules, _val_set, _cfg.seed, _device)
            _row["val_mel_l1"] = "" if _val is None else _val
            _extra["history"] = list(_extra.get("history", [])) + [_val]
            _extra["val_mel_l1"] = _val
            if _val is not None:
                _best = _extra.get("best_val_mel_l1")
                if (_best is None) or (_val < _best):
                    _extra["best_val_mel_l1"] = _val
                    _extra["bad_epochs"] = 0
                else:
                    _extra["bad_epochs"] = _extra.get("bad_epochs", 0) + 1
        _writer.write(_row)

        if (_step % _cfg.log_every == 0) or _epoch_end:
            _terms = " ".join(f"{_k}={_v:.4f}" for _k, _v in _row.items() if isinstance(_v, float))
            logger.info(f"[joint] step {_step}: {_terms}")

        if _ckpt_path and (_step % _cfg.checkpoint_every == 0) and (_step < _cfg.max_steps):
            _periodic = _make_checkpoint(
                StageEnum.JOINT,
                _step,
                config,
                {_n: snapshot(_m) for _n, _m in _modules.items()},
                _optimizers,
                _schedulers,
                extra=dict(_extra, epoch=_epoch),
            )
            save_checkpoint(_periodic, _ckpt_path.replace(".ckpt", f"-step{_step}.ckpt"))

        if _cfg.joint_early_stop and (_extra.get("bad_epochs", 0) >= _cfg.patience):
            _extra["stopped_early"] = True
            logger.info(
                f"[joint] val mel L1 stalled for {_extra['bad_epochs']} epoch(s), stopping at step {_step}."
            )
            break

    _checkpoint = _make_checkpoint(
        StageEnum.JOINT,
        _step,
        config,
        {_n: snapshot(_m) for _n, _m in _modules.items()},
        _optimizers,
        _schedulers,
        extra=dict(_extra, epoch=_epoch),
    )
    return _finish(_checkpoint, _ckpt_path)


__all__ = [
    "config_hash",
    "build_modules",
    "load_stage_modules",
    "freeze",
    "snapshot",
    "MetricsWriter",
    "epoch_batches",
    "iterate_steps",
    "check_finite",
    "pick_faces",
    "pretrain_prosody",
    "speaker_accuracy",
    "pretrain_lip",
    "lip_cer",
    "val_cs_loss",
    "pretrain_face",
    "val_mel_l1",
    "train_joint",
]
