# -*- coding: utf-8 -*-

from .__version__ import __version__
from ._consts import (
    WarnEnum,
    StageEnum,
    SplitEnum,
    UnitEnum,
    FaceFramesEnum,
    BLANK_ID,
    ALPHABET,
    VOCAB_SIZE,
    MODULE_NAMES,
)
from ._exceptions import *
from ._schemas import (
    AudioConfig,
    VideoConfig,
    CorpusConfig,
    ModelConfig,
    OptimizerConfig,
    LossWeights,
    TrainConfig,
    ProsodyPretrainConfig,
    InferenceConfig,
    EvalConfig,
    BaseConfig,
    FacevoxConfig,
)
from ._config import ConfigLoader
from ._text import GraphemeIds, encode_transcript, decode_graphemes
from ._audio import MelSpectrogram, compute_mel, griffin_lim
from ._corpus import (
    CorpusManifest,
    UtteranceSample,
    generate_toy_corpus,
    grid_import,
    load_utterance,
    UtteranceDataset,
)
from ._lip import LipEncoder, lip_forward, ctc_logits, ctc_loss, greedy_decode
from ._face import FaceEncoder, ProsodyEncoder, face_forward, prosody_forward, cs_loss
from ._decoder import (
    Generator,
    MultiPeriodDiscriminator,
    MultiScaleDiscriminator,
    LossBundle,
    concat_condition,
    generate_mel,
    gan_losses,
)
from ._checkpoint import Checkpoint, save_checkpoint, load_checkpoint, apply_checkpoint
from ._train import pretrain_prosody, pretrain_lip, pretrain_face, train_joint, config_hash
from ._metrics import edit_distance_rate, silhouette, mel_l1
from ._infer import EmbeddingPool, SynthesisRequest, build_embedding_pool, i2i_select, synthesize
from ._eval import EvalReport, AblationReport, project_2d, run_eval, cs_ablation
from ._cli import main
