"""Deterministic toy text encoder over a closed caption vocabulary."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLORS = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (40, 80, 225),
    "yellow": (235, 210, 40),
    "purple": (150, 50, 190),
    "orange": (240, 130, 30),
    "white": (240, 240, 240),
    "cyan": (40, 200, 210),
}
SHAPES = ("circle", "square", "triangle", "ring", "cross")
VOCAB = ("a",) + tuple(COLORS) + SHAPES

EMBED_DIM = 32
MAX_TOKENS = 4
TABLE_SEED = 20220

_NULL, _PAD = len(VOCAB), len(VOCAB) + 1


class VocabularyError(ValueError):
    pass


def caption(color: str, shape: str) -> str:
    return f"a {color} {shape}"


def parse_caption(text: str) -> tuple[str | None, str | None]:
    """Pull the (color, shape) words out of a toy caption; missing parts are None."""
    words = text.lower().split()
    color = next((w for w in words if w in COLORS), None)
    shape = next((w for w in words if w in SHAPES), None)
    return color, shape


def _tables() -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(TABLE_SEED)
    tokens = rng.standard_normal((len(VOCAB) + 2, EMBED_DIM)).astype(np.float32)
    positions = 0.5 * rng.standard_normal((MAX_TOKENS, EMBED_DIM)).astype(np.float32)
    return tokens, positions


_TOKENS, _POSITIONS = _tables()


@dataclass(frozen=True)
class PromptEmbedding:
    text: str
    tokens: np.ndarray  # (MAX_TOKENS, EMBED_DIM) float32
    is_empty: bool


def tokenize(text: str) -> list[int]:
    words = text.lower().split()
    unknown = [w for w in words if w not in VOCAB]
    if unknown:
        raise VocabularyError(f"prompt {text!r} outside toy vocabulary: {unknown}")
    if len(words) > MAX_TOKENS:
        raise VocabularyError(f"prompt {text!r} longer than {MAX_TOKENS} words")
    return [VOCAB.index(w) for w in words]


def encode_prompt(text: str) -> PromptEmbedding:
    """Embed ``text``; the empty prompt maps to the reserved null row plus padding."""
    ids = tokenize(text)
    is_empty = not ids
    if is_empty:
        ids = [_NULL]
    ids = ids + [_PAD] * (MAX_TOKENS - len(ids))
    tokens = _TOKENS[ids] + _POSITIONS
    tokens.setflags(write=False)
    return PromptEmbedding(text=" ".join(text.lower().split()), tokens=tokens, is_empty=is_empty)
