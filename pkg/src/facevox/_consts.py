# -*- coding: utf-8 -*-

from enum import Enum


class WarnEnum(str, Enum):
    ERROR = "ERROR"
    ALWAYS = "ALWAYS"
    DEBUG = "DEBUG"
    IGNORE = "IGNORE"


class StageEnum(str, Enum):
    PRETRAIN_PROSODY = "pretrain_prosody"
    PRETRAIN_LIP = "pretrain_lip"
    PRETRAIN_FACE = "pretrain_face"
    JOINT = "joint"


class SplitEnum(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class UnitEnum(str, Enum):
    CHAR = "char"
    WORD = "word"


class FaceFramesEnum(str, Enum):
    SINGLE = "single"
    AVERAGE = "average"


ENV_PREFIX = "FACEVOX_"
EXTRA_DIR_ENV = "FACEVOX_EXTRA_DIR"
CONFIG_FILE_PATTERNS = ("*.yaml", "*.yml", "*.json")

## Graphemes: blank=0, a..z=1..26, space=27
BLANK_ID = 0
ALPHABET = "abcdefghijklmnopqrstuvwxyz "
VOCAB_SIZE = len(ALPHABET) + 1

CONFIG_SCHEMA_VERSION = 1
CORPUS_SCHEMA_VERSION = 1
CHECKPOINT_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1

CHECKPOINT_MAGIC = b"FVXCKPT\x00"

## Corpus file names inside `root/<speaker>/<utt>/`
LIPS_FILE = "lips.npz"
FACE_FILE = "face.npz"
AUDIO_FILE = "audio.pcm16"
TRANSCRIPT_FILE = "transcript.txt"
MANIFEST_FILE = "manifest.json"

## Module names used as checkpoint blob prefixes
MODULE_NAMES = ("lip", "face", "prosody", "generator", "mpd", "msd")
