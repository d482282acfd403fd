"""Character alphabet, lyrics normalization, and the shared frame/time grid.

The alphabet covers the 26 lowercase ASCII letters, the apostrophe and a
single whitespace symbol (28 characters total).  Index 28 is reserved for
the blank symbol used by the CTC machinery; the blank is never part of
normalized text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

LETTERS = "abcdefghijklmnopqrstuvwxyz"
APOSTROPHE = "'"
SPACE = " "
SYMBOLS = LETTERS + APOSTROPHE + SPACE

#: Index of the blank symbol (always the last class).
BLANK = len(SYMBOLS)
#: Total number of output classes (28 characters + blank).
NUM_CLASSES = BLANK + 1

SPACE_INDEX = SYMBOLS.index(SPACE)

_CHAR_TO_INDEX = {c: i for i, c in enumerate(SYMBOLS)}
_WHITESPACE_RUN = re.compile(r"\s+")


class Alphabet:
    """Bidirectional mapping between characters and class indices.

    The blank is not a member of ``symbols``; it only exists as the extra
    class index ``blank_index`` emitted by the acoustic model.
    """

    def __init__(self, symbols: str = SYMBOLS):
        self.symbols = symbols
        self.blank_index = len(symbols)
        self.num_classes = len(symbols) + 1
        self._to_index = {c: i for i, c in enumerate(symbols)}

    def __contains__(self, char: str) -> bool:
        return char in self._to_index

    def index(self, char: str) -> int:
        return self._to_index[char]

    def char(self, index: int) -> str:
        if not 0 <= index < len(self.symbols):
            raise IndexError(f"index {index} is not a character class")
        return self.symbols[index]

    def encode(self, text: str) -> np.ndarray:
        """Map supported text to an index sequence (no blanks)."""
        try:
            return np.array([self._to_index[c] for c in text], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"unsupported character {exc.args[0]!r}") from exc

    def decode(self, indices) -> str:
        return "".join(self.char(int(i)) for i in indices)


#: The default 28-symbol alphabet shared across the package.
DEFAULT_ALPHABET = Alphabet()


def normalize_text(raw_text: str) -> str:
    """Reduce arbitrary text to the supported character set.

    Uppercase ASCII is lowered, whitespace runs (including newlines)
    collapse to a single space, every other unsupported character is
    dropped, and leading/trailing whitespace is stripped.  The result may
    be empty.
    """
    text = _WHITESPACE_RUN.sub(SPACE, raw_text.lower())
    text = "".join(c for c in text if c in _CHAR_TO_INDEX)
    # Dropping characters can merge separated whitespace into new runs.
    text = _WHITESPACE_RUN.sub(SPACE, text)
    return text.strip()


def normalize_lyrics(raw_text: str) -> np.ndarray:
    """Normalize text and encode it with the default alphabet."""
    return DEFAULT_ALPHABET.encode(normalize_text(raw_text))


def check_prob_matrix(probs: np.ndarray, num_classes: int | None = None,
                      tol: float = 1e-6) -> np.ndarray:
    """Validate a frame/class probability matrix (rows sum to 1)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probability matrix must be 2-D (frames x classes)")
    if num_classes is not None and probs.shape[1] != num_classes:
        raise ValueError(
            f"expected {num_classes} classes, got {probs.shape[1]}")
    if np.any(probs < -tol) or np.any(probs > 1 + tol):
        raise ValueError("probabilities out of [0, 1]")
    if np.max(np.abs(probs.sum(axis=1) - 1.0)) > tol:
        raise ValueError("rows do not sum to 1")
    return probs


@dataclass(frozen=True)
class TimeGrid:
    """Mapping from output frame indices to audio time.

    Frame ``t`` covers samples ``[t * hop + origin_offset,
    (t + 1) * hop + origin_offset)``.
    """

    sample_rate: float
    hop: int
    origin_offset: int = 0

    def __post_init__(self):
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def frame_to_time(self, t: int) -> float:
        return (t * self.hop + self.origin_offset) / self.sample_rate


def frame_to_time(t: int, grid: TimeGrid) -> float:
    """Start time in seconds of output frame ``t``."""
    return grid.frame_to_time(t)
