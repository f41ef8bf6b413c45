# -*- coding: utf-8 -*-

from typing import Sequence, Union

import numpy as np
import torch
from sklearn.metrics import silhouette_score

from ._audio import MelSpectrogram
from ._consts import UnitEnum
from ._exceptions import EvaluationError, ShapeError


def levenshtein(reference: Sequence, hypothesis: Sequence) -> int:
    """Edit distance (unit-cost insert/delete/substitute) with a rolling DP row."""

    _previous = list(range(len(hypothesis) + 1))
    for _i, _ref in enumerate(reference, start=1):
        _current = [_i] + [0] * len(hypothesis)
        for _j, _hyp in enumerate(hypothesis, start=1):
            _current[_j] = min(
                _previous[_j] + 1,
                _current[_j - 1] + 1,
                _previous[_j - 1] + (0 if _ref == _hyp else 1),
            )
        _previous = _current

    return _previous[-1]


def edit_distance_rate(reference: str, hypothesis: str, unit: Union[UnitEnum, str] = UnitEnum.CHAR) -> float:
    """Levenshtein distance over characters or whitespace-split words, divided by the reference length.

    Raises:
        EvaluationError: If the reference is empty in the chosen unit.
    """

    _unit = UnitEnum(unit)
    if _unit == UnitEnum.WORD:
        _ref, _hyp = reference.split(), hypothesis.split()
    else:
        _ref, _hyp = list(reference), list(hypothesis)

    if len(_ref) == 0:
        raise EvaluationError("Reference is empty, error rate is undefined!")

    return levenshtein(_ref, _hyp) / len(_ref)


def silhouette(embeddings: Union[np.ndarray, Sequence], labels: Sequence) -> float:
    """Mean Euclidean silhouette coefficient.

    Points whose distances are all zero score 0, so fully coincident clusters give 0.

    Raises:
        EvaluationError: If there are fewer than 2 labels or a label has fewer than 2 members.
    """

    _x = np.asarray(
        [_e.detach().cpu().numpy() if torch.is_tensor(_e) else np.asarray(_e) for _e in embeddings],
        dtype=np.float64,
    )
    _labels = np.asarray(list(labels))
    if _x.ndim != 2 or (_x.shape[0] != _labels.shape[0]):
        raise ShapeError(f"Need one label per embedding row, got {_x.shape} and {_labels.shape}!")

    _unique, _counts = np.unique(_labels, return_counts=True)
    if len(_unique) < 2:
        raise EvaluationError("Silhouette needs at least 2 distinct labels!")

    if (_counts < 2).any():
        raise EvaluationError(
            f"Every label needs >= 2 members for a silhouette, got {dict(zip(_unique.tolist(), _counts.tolist()))}!"
        )

    if len(_unique) >= _x.shape[0]:
        raise EvaluationError("Silhouette needs fewer labels than points!")

    return float(silhouette_score(_x, _labels, metric="euclidean"))


def mel_l1(a: Union[MelSpectrogram, np.ndarray, torch.Tensor], b: Union[MelSpectrogram, np.ndarray, torch.Tensor]) -> float:
    """Mean absolute difference of two equally shaped mels."""

    _a = _as_array(a)
    _b = _as_array(b)
    if _a.shape != _b.shape:
        raise ShapeError(f"Mel shapes differ: {_a.shape} vs {_b.shape}!")

    return float(np.mean(np.abs(_a - _b)))


def _as_array(mel: Union[MelSpectrogram, np.ndarray, torch.Tensor]) -> np.ndarray:
    if isinstance(mel, MelSpectrogram):
        return mel.values.astype(np.float64)

    if torch.is_tensor(mel):
        return mel.detach().cpu().numpy().astype(np.float64)

    return np.asarray(mel, dtype=np.float64)


__all__ = ["levenshtein", "edit_distance_rate", "silhouette", "mel_l1"]
