# -*- coding: utf-8 -*-

import json
import logging
import functools
from pathlib import Path

import numpy as np
import pytest
import torch

try:
    from facevox import (
        CorpusManifest,
        EvaluationError,
        ShapeError,
        EvalReport,
        edit_distance_rate,
        silhouette,
        mel_l1,
        project_2d,
        run_eval,
        cs_ablation,
        pretrain_prosody,
    )
    from facevox._metrics import levenshtein
    from facevox._train import build_modules, freeze
except ImportError:
    from src.facevox import (
        CorpusManifest,
        EvaluationError,
        ShapeError,
        EvalReport,
        edit_distance_rate,
        silhouette,
        mel_l1,
        project_2d,
        run_eval,
        cs_ablation,
        pretrain_prosody,
    )
    from src.facevox._metrics import levenshtein
    from src.facevox._train import build_modules, freeze


logger = logging.getLogger(__name__)


def _oracle_distance(a: str, b: str) -> int:
    @functools.lru_cache(maxsize=None)
    def _d(i: int, j: int) -> int:
        if i == 0 or j == 0:
            return i + j
        return min(_d(i - 1, j) + 1, _d(i, j - 1) + 1, _d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return _d(len(a), len(b))


@pytest.fixture(scope="module")
def modules(tiny_config):
    torch.manual_seed(33)
    _modules = build_modules(tiny_config, ("lip", "face", "generator"))
    for _module in _modules.values():
        freeze(_module)
    return _modules


def test_levenshtein_against_oracle():
    logger.info("Testing 'levenshtein' against a recursive definition...")

    _rng = np.random.default_rng(0)
    for _ in range(200):
        _a = "".join(_rng.choice(list("abc "), size=int(_rng.integers(0, 8))))
        _b = "".join(_rng.choice(list("abc "), size=int(_rng.integers(0, 8))))
        assert levenshtein(_a, _b) == _oracle_distance(_a, _b)

    logger.info("Done: 'levenshtein' against a recursive definition.\n")


@pytest.mark.parametrize(
    "reference, hypothesis, unit, expected",
    [
        ("abc", "abc", "char", 0.0),
        ("abc", "abd", "char", 1.0 / 3.0),
        ("abc", "", "char", 1.0),
        ("ab", "abcd", "char", 1.0),
        ("bin blue at f two", "bin blue at f two", "word", 0.0),
        ("bin blue", "bin red", "word", 0.5),
        ("bin blue", "", "word", 1.0),
        ("bin  blue", "bin blue", "word", 0.0),
    ],
)
def test_edit_distance_rate(reference: str, hypothesis: str, unit: str, expected: float):
    logger.info(f"Testing 'edit_distance_rate' ({unit}) '{reference}' vs '{hypothesis}'...")

    assert edit_distance_rate(reference, hypothesis, unit) == pytest.approx(expected)

    logger.info("Done: 'edit_distance_rate'.\n")


def test_edit_distance_rate_empty_reference():
    logger.info("Testing 'edit_distance_rate' with an empty reference...")

    with pytest.raises(EvaluationError):
        edit_distance_rate("", "abc")
    with pytest.raises(EvaluationError):
        edit_distance_rate("   ", "abc", "word")

    logger.info("Done: 'edit_distance_rate' with an empty reference.\n")


def test_silhouette():
    logger.info("Testing 'silhouette'...")

    _rng = np.random.default_rng(1)
    _separated = np.vstack([_rng.normal(0, 0.01, (5, 3)), _rng.normal(10, 0.01, (5, 3))])
    _labels = ["a"] * 5 + ["b"] * 5
    assert silhouette(_separated, _labels) > 0.99

    _coincident = np.zeros((6, 3))
    assert silhouette(_coincident, ["a", "a", "a", "b", "b", "b"]) == pytest.approx(0.0)

    _torch_rows = [torch.tensor(_r) for _r in _separated]
    assert silhouette(_torch_rows, _labels) == pytest.approx(silhouette(_separated, _labels))

    with pytest.raises(EvaluationError):
        silhouette(_separated, ["a"] * 10)
    with pytest.raises(EvaluationError):
        silhouette(_separated[:5], ["a", "a", "a", "a", "b"])
    with pytest.raises(ShapeError):
        silhouette(_separated, _labels[:-1])

    logger.info("Done: 'silhouette'.\n")


def test_mel_l1():
    logger.info("Testing 'mel_l1'...")

    _a = np.zeros((4, 6), dtype=np.float32)
    _b = np.full((4, 6), -2.0, dtype=np.float32)
    assert mel_l1(_a, _b) == pytest.approx(2.0)
    assert mel_l1(torch.from_numpy(_a), _a) == 0.0
    with pytest.raises(ShapeError):
        mel_l1(_a, _b[:, :-1])

    logger.info("Done: 'mel_l1'.\n")


def test_project_2d(tmp_path: Path):
    logger.info("Testing 'project_2d'...")

    _rng = np.random.default_rng(2)
    _points = np.vstack([_rng.normal(0, 1, (6, 5)), _rng.normal(8, 1, (6, 5))])
    _labels = ["a"] * 6 + ["b"] * 6
    _coords = project_2d(_points, _labels, tmp_path / "tsne.png", seed=0, perplexity=3.0)
    assert _coords.shape == (12, 2)
    assert np.isfinite(_coords).all()
    assert (tmp_path / "tsne.png").stat().st_size > 0
    np.testing.assert_allclose(project_2d(_points, _labels, seed=0, perplexity=3.0), _coords)

    # collinear points take the PCA path
    _line = np.outer(np.arange(5, dtype=np.float64), np.array([1.0, 2.0, 3.0]))
    _flat = project_2d(_line, ["a", "a", "b", "b", "b"], tmp_path / "pca.png")
    assert _flat.shape == (5, 2)
    np.testing.assert_allclose(_flat[:, 1], 0.0, atol=1e-6)

    _one_dim = project_2d(np.arange(4, dtype=np.float64)[:, None], ["a", "a", "b", "b"])
    assert _one_dim.shape == (4, 2)

    with pytest.raises(EvaluationError):
        project_2d(_points[:2], _labels[:2])

    logger.info("Done: 'project_2d'.\n")


def test_run_eval_with_oracle_decoder(tmp_path: Path, toy_manifest: CorpusManifest, tiny_config, modules):
    logger.info("Testing 'run_eval' with an oracle decoder...")

    _manifest = toy_manifest.model_copy(update={"unseen_speakers": ["s3"]})
    _report = run_eval(
        _manifest,
        tiny_config,
        modules,
        split="train",
        decoder=lambda _sample: _sample.transcript,
        output_dir=str(tmp_path),
    )

    assert _report.n_utterances == 6
    assert _report.cer == 0.0 and _report.wer == 0.0
    assert _report.mel_l1 == pytest.approx(np.mean([_r.mel_l1 for _r in _report.rows]))
    assert set(_report.per_speaker) == {"s1", "s2", "s3"}
    assert sum(_g.n_utterances for _g in _report.per_speaker.values()) == 6
    assert _report.groups["unseen"].n_utterances == 2
    assert _report.groups["seen"].n_utterances == 4
    assert _report.silhouette is not None and -1.0 <= _report.silhouette <= 1.0
    assert set(_report.checkpoint_hashes) == {"lip", "face", "generator"}

    _saved = EvalReport.model_validate(json.loads((tmp_path / "report.json").read_text()))
    assert _saved == _report
    assert Path(_report.projection_path).is_file()

    logger.info("Done: 'run_eval' with an oracle decoder.\n")


def test_run_eval_greedy_and_degenerate(toy_manifest: CorpusManifest, tiny_config, modules):
    logger.info("Testing 'run_eval' with greedy decoding on the test split...")

    _report = run_eval(toy_manifest, tiny_config, modules)
    assert _report.split == "test"
    assert _report.n_utterances == 3
    assert _report.cer >= 0.0
    for _row in _report.rows:
        assert _row.cer == edit_distance_rate(_row.transcript, _row.hypothesis, "char")
    # one test utterance per speaker: silhouette is undefined
    assert _report.silhouette is None
    assert _report.groups == {}

    _empty = toy_manifest.model_copy(
        update={"entries": [_e for _e in toy_manifest.entries if _e.split.value != "test"]}
    )
    with pytest.raises(EvaluationError):
        run_eval(_empty, tiny_config, modules)

    logger.info("Done: 'run_eval' greedy and degenerate cases.\n")


def test_cs_ablation(tmp_path: Path, toy_manifest: CorpusManifest, tiny_config):
    logger.info("Testing 'cs_ablation'...")

    _prosody = pretrain_prosody(toy_manifest, tiny_config)
    _report = cs_ablation(toy_manifest, tiny_config, _prosody, output_dir=str(tmp_path))

    assert _report.steps == tiny_config.eval.ablation_steps
    assert _report.n_utterances == 12
    assert _report.margin == pytest.approx(_report.silhouette_with_cs - _report.silhouette_without_cs)
    assert (tmp_path / "ablation" / "ablation.json").is_file()
    assert Path(_report.plot_with_cs).is_file() and Path(_report.plot_without_cs).is_file()
    assert (tmp_path / "ablation" / "with_cs" / "checkpoints" / "pretrain_face.ckpt").is_file()

    logger.info("Done: 'cs_ablation'.\n")
