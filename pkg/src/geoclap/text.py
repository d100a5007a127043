"""Text normalization, address augmentation, tokenization, and featurization.

The tokenizer is a deterministic hashing tokenizer (FNV-1a into ids
1..30000, 0 reserved for padding) with a hard length of 77 ids. The text
feature is a signed hashed bag of tokens, so it is order-invariant and
needs no vocabulary file.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

MAX_TOKENS = 77
VOCAB_SIZE = 30000
PAD_ID = 0
TEXT_FEATURE_DIM = 512

LOCATION_SENTENCE_PREFIX = "The location of the sound is:"

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def _normalize_ws(s: str) -> str:
    return " ".join(s.split())


@dataclass(frozen=True)
class TextRecord:
    title: str = ""
    description: str = ""
    address: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "title", _normalize_ws(self.title))
        object.__setattr__(self, "description", _normalize_ws(self.description))
        if self.address is not None:
            object.__setattr__(self, "address", _normalize_ws(self.address))


@dataclass(frozen=True)
class TokenSequence:
    """Exactly 77 token ids; pad id 0 appears only after attention_len."""

    ids: tuple[int, ...]
    attention_len: int

    def __post_init__(self):
        if len(self.ids) != MAX_TOKENS:
            raise ValueError(f"token sequence must have length {MAX_TOKENS}")
        if any(i == PAD_ID for i in self.ids[: self.attention_len]):
            raise ValueError("pad id inside the attended prefix")
        if any(i != PAD_ID for i in self.ids[self.attention_len:]):
            raise ValueError("non-pad id after attention_len")


def augment_text_with_address(record: TextRecord) -> str:
    """Join title and description, then append the location sentence
    when an address is known."""
    base = ". ".join(p for p in (record.title, record.description) if p)
    if record.address is None or not record.address:
        return base
    sentence = f"{LOCATION_SENTENCE_PREFIX} {record.address}."
    return f"{base} {sentence}" if base else sentence


def _fnv1a(token: str) -> int:
    h = 0x811C9DC5
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * 0x01000193) & 0xFFFFFFFF
    return h


def tokenize(text: str, max_length: int = MAX_TOKENS) -> TokenSequence:
    """Lowercase, split on whitespace/punctuation, hash into [1, 30000],
    then truncate or zero-pad to exactly ``max_length`` ids."""
    tokens = _TOKEN_RE.findall(text.lower())[:max_length]
    ids = [(_fnv1a(t) % VOCAB_SIZE) + 1 for t in tokens]
    attention_len = len(ids)
    ids.extend([PAD_ID] * (max_length - attention_len))
    return TokenSequence(tuple(ids), attention_len)


def text_feature_vector(tokens: TokenSequence) -> tuple[np.ndarray, bool]:
    """Signed hashed bag-of-tokens, l2-normalized.

    Each non-pad id increments bucket (id mod 512) with sign (-1)^(id mod 2).
    Returns (vector, is_empty); an all-zero accumulation comes back as the
    zero vector with the flag set instead of raising.
    """
    vec = np.zeros(TEXT_FEATURE_DIM)
    for token_id in tokens.ids[: tokens.attention_len]:
        sign = -1.0 if token_id % 2 else 1.0
        vec[token_id % TEXT_FEATURE_DIM] += sign
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        return np.zeros(TEXT_FEATURE_DIM), True
    return vec / norm, False


def featurize_text(text: str) -> np.ndarray:
    """Tokenize then embed; the convenience path used by batching and the service."""
    vec, _ = text_feature_vector(tokenize(text))
    return vec
