# -*- coding: utf-8 -*-

## Standard libraries
import os
import sys
import argparse
from typing import Callable, Dict, List, Optional

## Third-party libraries
import numpy as np
from loguru import logger

## Internal modules
from .__version__ import __version__
from ._consts import SplitEnum, StageEnum
from ._exceptions import FacevoxError
from ._schemas import FacevoxConfig
from ._config import ConfigLoader
from ._corpus import CorpusManifest, generate_toy_corpus, grid_import
from ._checkpoint import load_checkpoint
from ._train import pretrain_face, pretrain_lip, pretrain_prosody, train_joint
from ._infer import (
    SynthesisRequest,
    build_embedding_pool,
    i2i_select,
    load_inference_modules,
    synthesize,
)
from ._eval import cs_ablation, run_eval
from ._utils import ensure_dir


_LOG_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}"


def _checkpoint_path(config: FacevoxConfig, stage: StageEnum) -> str:
    return os.path.join(config.output_dir, "checkpoints", f"{stage.value}.ckpt")


def _manifest(config: FacevoxConfig) -> CorpusManifest:
    return CorpusManifest.load(config.corpus.root)


def _cmd_gen_corpus(args: argparse.Namespace, config: FacevoxConfig) -> None:
    _corpus = config.corpus
    _manifest_obj = generate_toy_corpus(
        root=_corpus.root,
        n_speakers=_corpus.n_speakers,
        utterances_per_speaker=_corpus.utterances_per_speaker,
        seed=_corpus.seed,
        audio_cfg=config.audio,
        video_cfg=config.video,
        face_size=_corpus.face_size,
        split_ratios=_corpus.split_ratios,
        unseen_speakers=_corpus.unseen_speakers,
        force=_corpus.force,
    )
    logger.success(f"Toy corpus with {len(_manifest_obj.entries)} utterances written to '{_manifest_obj.root}'.")


def _cmd_import_grid(args: argparse.Namespace, config: FacevoxConfig) -> None:
    _corpus = config.corpus
    _manifest_obj = grid_import(
        directory=args.source,
        root=_corpus.root,
        audio_cfg=config.audio,
        video_cfg=config.video,
        face_size=_corpus.face_size,
        split_ratios=_corpus.split_ratios,
        seed=_corpus.seed,
        force=_corpus.force,
    )
    logger.success(
        f"Imported {len(_manifest_obj.entries)} utterances ({len(_manifest_obj.skipped)} skipped) into '{_manifest_obj.root}'."
    )


def _cmd_pretrain_prosody(args: argparse.Namespace, config: FacevoxConfig) -> None:
    pretrain_prosody(_manifest(config), config, output_dir=config.output_dir)


def _cmd_pretrain_lip(args: argparse.Namespace, config: FacevoxConfig) -> None:
    pretrain_lip(_manifest(config), config, output_dir=config.output_dir)


def _cmd_pretrain_face(args: argparse.Namespace, config: FacevoxConfig) -> None:
    _prosody = load_checkpoint(args.prosody or _checkpoint_path(config, StageEnum.PRETRAIN_PROSODY))
    pretrain_face(_manifest(config), config, _prosody, output_dir=config.output_dir)


def _cmd_train(args: argparse.Namespace, config: FacevoxConfig) -> None:
    """Runs the stage named by `train.stage`; only `joint` reads the checkpoint flags."""

    _stage = config.train.stage
    if _stage == StageEnum.PRETRAIN_PROSODY:
        return _cmd_pretrain_prosody(args, config)
    if _stage == StageEnum.PRETRAIN_LIP:
        return _cmd_pretrain_lip(args, config)
    if _stage == StageEnum.PRETRAIN_FACE:
        return _cmd_pretrain_face(args, config)

    _lip_path = args.lip or _checkpoint_path(config, StageEnum.PRETRAIN_LIP)
    _face_path = args.face or _checkpoint_path(config, StageEnum.PRETRAIN_FACE)
    _resume = load_checkpoint(args.resume) if args.resume else None
    train_joint(
        _manifest(config),
        config,
        lip_checkpoint=None if _resume else load_checkpoint(_lip_path),
        face_checkpoint=None if _resume else load_checkpoint(_face_path),
        prosody_checkpoint=load_checkpoint(args.prosody) if (args.prosody and not _resume) else None,
        resume=_resume,
        output_dir=config.output_dir,
    )


def _inference_checkpoints(args: argparse.Namespace, config: FacevoxConfig) -> List[str]:
    return args.checkpoint or [_checkpoint_path(config, StageEnum.JOINT)]


def _cmd_synth(args: argparse.Namespace, config: FacevoxConfig) -> None:
    _request = SynthesisRequest.create(
        lips=args.lips,
        face_speaker=args.face_speaker,
        face_utterance=args.face_utterance,
        face_image=args.face_image,
        face_embedding=args.face_embedding,
        output_stem=args.stem,
    )
    _modules = load_inference_modules(config, _inference_checkpoints(args, config))
    _result = synthesize(
        _request,
        _modules,
        _manifest(config),
        config,
        output_dir=os.path.join(config.output_dir, "synth"),
    )
    print(_result.wav_path)


def _cmd_select_embedding(args: argparse.Namespace, config: FacevoxConfig) -> None:
    _infer = config.infer
    _modules = load_inference_modules(config, _inference_checkpoints(args, config))
    _pool = build_embedding_pool(
        _manifest(config), _modules["face"], _infer.pool_split, _infer.pool_seed, _infer.face_frames
    )
    _selection = i2i_select(_pool, args.speaker, halve=_infer.halve_i2i)
    _path = args.out or os.path.join(config.output_dir, "embeddings", f"{args.speaker}.npy")
    ensure_dir(os.path.dirname(os.path.abspath(_path)))
    np.save(_path, _selection.embedding.astype(np.float32))
    logger.success(
        f"Selected '{_selection.speaker_id}/{_selection.utterance_id}' (ratio {_selection.ratio:.4f}, "
        f"negative '{_selection.negative_speaker}') -> '{_path}'."
    )
    print(_path)


def _cmd_eval(args: argparse.Namespace, config: FacevoxConfig) -> None:
    _manifest_obj = _manifest(config)
    _eval_dir = os.path.join(config.output_dir, "eval")
    if args.ablation:
        _prosody = load_checkpoint(args.prosody or _checkpoint_path(config, StageEnum.PRETRAIN_PROSODY))
        _report = cs_ablation(_manifest_obj, config, _prosody, output_dir=_eval_dir)
        print(_report.model_dump_json(indent=2))
        return

    _modules = load_inference_modules(config, _inference_checkpoints(args, config))
    _report = run_eval(_manifest_obj, config, _modules, split=args.split, output_dir=_eval_dir)
    print(_report.model_dump_json(exclude={"rows"}, indent=2))


_COMMANDS: Dict[str, Callable[[argparse.Namespace, FacevoxConfig], None]] = {
    "gen-corpus": _cmd_gen_corpus,
    "import-grid": _cmd_import_grid,
    "pretrain-prosody": _cmd_pretrain_prosody,
    "pretrain-lip": _cmd_pretrain_lip,
    "pretrain-face": _cmd_pretrain_face,
    "train": _cmd_train,
    "synth": _cmd_synth,
    "select-embedding": _cmd_select_embedding,
    "eval": _cmd_eval,
}

# Flag dest -> dotted config key.
_FLAG_KEYS = {
    "speakers": "corpus.n_speakers",
    "utts": "corpus.utterances_per_speaker",
    "seed": "corpus.seed",
    "unseen": "corpus.unseen_speakers",
    "root": "corpus.root",
    "force": "corpus.force",
    "stage": "train.stage",
    "steps": "train.max_steps",
    "device": "train.device",
}


def build_parser() -> argparse.ArgumentParser:
    _common = argparse.ArgumentParser(add_help=False)
    _common.add_argument(
        "-c", "--config", action="append", default=[], metavar="FILE", help="YAML/JSON config file (repeatable, later wins)."
    )
    _common.add_argument(
        "-s", "--set", action="append", default=[], dest="overrides", metavar="KEY=VALUE",
        help="Dotted config override, e.g. train.max_steps=10 (repeatable).",
    )
    _common.add_argument(
        "--configs-dir", default=None, metavar="DIR", help="Directory of config files loaded first. Defaults to ./configs."
    )
    _common.add_argument("--output-dir", default=None, metavar="DIR", help="Overrides `output_dir`.")
    _common.add_argument("--root", default=None, metavar="DIR", help="Corpus directory (`corpus.root`).")
    _verbosity = _common.add_mutually_exclusive_group()
    _verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    _verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only.")

    _parser = argparse.ArgumentParser(
        prog="facevox",
        description="Lip and face conditioned mel-spectrogram synthesis: corpus, training, synthesis and evaluation.",
    )
    _parser.add_argument("-V", "--version", action="version", version=f"%(prog)s {__version__}")
    _subparsers = _parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    _gen = _subparsers.add_parser("gen-corpus", parents=[_common], help="Generate the procedural toy corpus.")
    _gen.add_argument("--speakers", type=int, default=None)
    _gen.add_argument("--utts", type=int, default=None, help="Utterances per speaker.")
    _gen.add_argument("--seed", type=int, default=None)
    _gen.add_argument("--unseen", type=int, default=None, help="Trailing speakers held out to the test split.")
    _gen.add_argument("--force", action="store_true", default=None, help="Overwrite a non-empty corpus directory.")

    _grid = _subparsers.add_parser("import-grid", parents=[_common], help="Import a GRID-format directory.")
    _grid.add_argument("source", metavar="GRID_DIR")
    _grid.add_argument("--force", action="store_true", default=None)

    for _name, _help in (
        ("pretrain-prosody", "Pre-train the prosody encoder (speaker classification)."),
        ("pretrain-lip", "Pre-train the lip encoder on CTC."),
    ):
        _stage = _subparsers.add_parser(_name, parents=[_common], help=_help)
        _stage.add_argument("--steps", type=int, default=None, help="Overrides the stage's max_steps.")
        _stage.add_argument("--device", default=None)

    _face = _subparsers.add_parser("pretrain-face", parents=[_common], help="Pre-train the face encoder on the CS loss.")
    _face.add_argument("--prosody", default=None, metavar="CKPT")
    _face.add_argument("--steps", type=int, default=None)
    _face.add_argument("--device", default=None)

    _train = _subparsers.add_parser("train", parents=[_common], help="Joint adversarial training.")
    _train.add_argument("--lip", default=None, metavar="CKPT")
    _train.add_argument("--face", default=None, metavar="CKPT")
    _train.add_argument("--prosody", default=None, metavar="CKPT")
    _train.add_argument(
        "--stage",
        choices=[_s.value for _s in StageEnum],
        default=None,
        help="Overrides `train.stage` (default: joint).",
    )
    _train.add_argument("--resume", default=None, metavar="CKPT", help="Continue a joint checkpoint.")
    _train.add_argument("--steps", type=int, default=None)
    _train.add_argument("--device", default=None)

    _synth = _subparsers.add_parser("synth", parents=[_common], help="Synthesise speech for one utterance's lips.")
    _synth.add_argument("--lips", required=True, metavar="SPK/UTT")
    _source = _synth.add_mutually_exclusive_group(required=True)
    _source.add_argument("--face-speaker", default=None, metavar="SPK", help="I2I-selected embedding of a speaker.")
    _source.add_argument("--face-utterance", default=None, metavar="SPK/UTT")
    _source.add_argument("--face-image", default=None, metavar="FILE", help="Face frames as .npy/.npz.")
    _source.add_argument("--face-embedding", default=None, metavar="FILE", help="Face embedding as .npy.")
    _synth.add_argument("--stem", default=None, help="Output file stem.")
    _synth.add_argument("--checkpoint", action="append", default=[], metavar="CKPT")

    _select = _subparsers.add_parser("select-embedding", parents=[_common], help="I2I face embedding for a speaker.")
    _select.add_argument("--speaker", required=True)
    _select.add_argument("--out", default=None, metavar="FILE")
    _select.add_argument("--checkpoint", action="append", default=[], metavar="CKPT")

    _eval = _subparsers.add_parser("eval", parents=[_common], help="Evaluate, or run the CS-loss ablation.")
    _eval.add_argument("--split", choices=[_s.value for _s in SplitEnum], default=None)
    _eval.add_argument("--checkpoint", action="append", default=[], metavar="CKPT")
    _eval.add_argument("--ablation", action="store_true")
    _eval.add_argument("--prosody", default=None, metavar="CKPT")

    return _parser


def _overrides(args: argparse.Namespace) -> List[str]:
    _result = list(args.overrides)
    if args.output_dir:
        _result.append(f"output_dir={args.output_dir}")

    for _dest, _key in _FLAG_KEYS.items():
        _value = getattr(args, _dest, None)
        if _value is None:
            continue
        if (_dest == "steps") and (
            (args.command == "pretrain-prosody") or (getattr(args, "stage", None) == StageEnum.PRETRAIN_PROSODY.value)
        ):
            _key = "prosody.max_steps"
        _result.append(f"{_key}={str(_value).lower() if isinstance(_value, bool) else _value}")

    return _result


def _one_line(err: BaseException) -> str:
    return "; ".join(_line.strip() for _line in str(err).splitlines() if _line.strip()) or type(err).__name__


def _configure_logging(verbose: bool, quiet: bool) -> None:
    logger.remove()
    _level = "DEBUG" if verbose else ("WARNING" if quiet else "INFO")
    logger.add(sys.stderr, level=_level, format=_LOG_FORMAT)


def load_config(args: argparse.Namespace) -> ConfigLoader:
    _configs_dir = args.configs_dir or os.path.join(os.getcwd(), "configs")
    _loader = ConfigLoader(
        configs_dirs=_configs_dir,
        config_files=args.config,
        overrides=_overrides(args),
        env_file_paths=os.path.join(os.getcwd(), ".env"),
    )
    _loader.load()
    return _loader


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point for the `facevox` command.

    Returns:
        int: 0 on success, 2 for usage/config errors, 1 for runtime failures.
    """

    _parser = build_parser()
    try:
        _args = _parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)

    _configure_logging(_args.verbose, _args.quiet)
    _file_sink = None
    try:
        _loader = load_config(_args)
        _config: FacevoxConfig = _loader.config
        _log_path = os.path.join(ensure_dir(os.path.join(_config.output_dir, "logs")), f"{_args.command}.log")
        _file_sink = logger.add(_log_path, level="DEBUG", format="{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {message}")
        logger.info(f"facevox {__version__} '{_args.command}' with config {_loader.config_hash[:12]}")
        logger.debug(f"Resolved config: {_config.model_dump_json()}")

        _COMMANDS[_args.command](_args, _config)
    except FacevoxError as err:
        logger.debug(f"'{_args.command}' failed with {type(err).__name__}.")
        print(f"error: {err.category}: {_one_line(err)}", file=sys.stderr)
        return err.exit_code
    except Exception as err:
        logger.opt(exception=err).debug("Unexpected failure:")
        print(f"error: runtime: {_one_line(err)}", file=sys.stderr)
        return 1
    finally:
        if _file_sink is not None:
            logger.remove(_file_sink)

    return 0


__all__ = ["build_parser", "load_config", "main"]
