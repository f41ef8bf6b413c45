# -*- coding: utf-8 -*-

from dataclasses import dataclass
from typing import Sequence, Tuple

from pydantic import validate_call

from ._consts import ALPHABET, BLANK_ID, VOCAB_SIZE
from ._exceptions import TranscriptError


_CHAR_TO_ID = {_char: _idx + 1 for _idx, _char in enumerate(ALPHABET)}
_ID_TO_CHAR = {_idx: _char for _char, _idx in _CHAR_TO_ID.items()}


@dataclass(frozen=True)
class GraphemeIds:
    """CTC target ids in [1, V-1]; never contains the blank id."""

    ids: Tuple[int, ...]

    def __post_init__(self):
        for _id in self.ids:
            if (_id == BLANK_ID) or not (0 < _id < VOCAB_SIZE):
                raise TranscriptError(f"Grapheme id {_id} is outside [1, {VOCAB_SIZE - 1}]!")

    def __len__(self) -> int:
        return len(self.ids)


@validate_call
def encode_transcript(text: str) -> GraphemeIds:
    """Encode a lowercase transcript over 'a'-'z' and space into grapheme ids.

    Args:
        text (str, required): Transcript to encode. Upper case letters are lowered.

    Raises:
        TranscriptError: If `text` is empty or contains an out-of-alphabet character.

    Returns:
        GraphemeIds: Encoded ids.
    """

    _text = text.lower()
    if _text == "":
        raise TranscriptError("Transcript is empty!")

    _bad = sorted({_char for _char in _text if _char not in _CHAR_TO_ID})
    if _bad:
        raise TranscriptError(f"Transcript '{text}' has out-of-alphabet characters: {_bad}")

    return GraphemeIds(ids=tuple(_CHAR_TO_ID[_char] for _char in _text))


def decode_graphemes(ids: Sequence[int]) -> str:
    """Inverse of `encode_transcript`. Accepts `GraphemeIds` or a plain int sequence."""

    if isinstance(ids, GraphemeIds):
        ids = ids.ids

    try:
        return "".join(_ID_TO_CHAR[int(_id)] for _id in ids)
    except KeyError as err:
        raise TranscriptError(f"Grapheme id {err.args[0]} can't be decoded!") from err


def is_valid_transcript(text: str) -> bool:
    return (text != "") and all(_char in _CHAR_TO_ID for _char in text)


__all__ = ["GraphemeIds", "encode_transcript", "decode_graphemes", "is_valid_transcript"]
