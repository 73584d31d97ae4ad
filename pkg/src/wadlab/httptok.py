"""Tokenization of raw HTTP request text and fixed-length id encoding.

The convention: maximal runs of word characters (letters, digits,
underscore, non-ASCII letters) form word tokens; every other non-whitespace
character is its own single-character token; a trailing CR LF CR LF becomes
the reserved ``<CRLF2>`` token. ASCII letters are lowercased, non-ASCII
characters are preserved verbatim so homoglyph substitutes stay
distinguishable from their Latin originals.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

CRLF2_TOKEN = "<CRLF2>"
END_SYMBOL = "\r\n\r\n"

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"

_TOKEN_RE = re.compile(r"\w+|\S", re.UNICODE)

# str.lower() would also fold non-ASCII uppercase (e.g. Greek), which must
# survive untouched for HLR triggers to stay distinct tokens.
_ASCII_LOWER = {ord(c): ord(c) + 32 for c in "ABCDEFGHIJKLMNOPQRSTUVWXYZ"}


def split_raw(text: str) -> list[str]:
    """Split text into tokens without case folding (used for re-serialization)."""
    return _TOKEN_RE.findall(text)


def tokenize(text: str) -> list[str]:
    """Tokenize request text; total function, returns [] for empty input.

    A trailing literal ``<CRLF2>`` marker is recognized alongside the raw
    CR LF CR LF bytes so that re-serialized token streams tokenize back to
    the same sequence.
    """
    has_end = text.endswith(END_SYMBOL)
    if has_end:
        text = text[: -len(END_SYMBOL)]
    elif text.endswith(CRLF2_TOKEN):
        has_end = True
        text = text[: -len(CRLF2_TOKEN)]
    tokens = [t.translate(_ASCII_LOWER) for t in _TOKEN_RE.findall(text)]
    if has_end:
        tokens.append(CRLF2_TOKEN)
    return tokens


@dataclass
class Vocab:
    """Frequency-cut vocabulary with reserved PAD=0 and UNK=1 ids."""

    token_to_id: dict[str, int]
    max_size: int
    id_to_token: dict[int, str] = field(init=False)

    def __post_init__(self):
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        self.id_to_token[PAD_ID] = PAD_TOKEN
        self.id_to_token[UNK_ID] = UNK_TOKEN

    @property
    def size(self) -> int:
        """Total id space including PAD and UNK."""
        return len(self.token_to_id) + 2

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.token_to_id, fh, ensure_ascii=False, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            mapping = json.load(fh)
        return cls(token_to_id=mapping, max_size=len(mapping))


def build_vocab(token_seqs, max_size: int) -> Vocab:
    """Keep the max_size most frequent tokens; ties break lexicographically.

    The vocabulary is built from the training split only (which may be
    poisoned; attacker trigger tokens legitimately enter it).
    """
    counts = Counter()
    for seq in token_seqs:
        counts.update(seq)
    if not counts:
        raise DataError("cannot build vocab from an empty corpus")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = ordered[:max_size]
    mapping = {tok: i + 2 for i, (tok, _) in enumerate(kept)}
    return Vocab(token_to_id=mapping, max_size=max_size)


def encode(tokens, vocab: Vocab, length: int) -> np.ndarray:
    """Map tokens to a fixed-length id vector: truncate, then PAD the tail."""
    if length < 1:
        raise DataError(f"encode length must be >= 1, got {length}")
    ids = np.full(length, PAD_ID, dtype=np.int64)
    for i, tok in enumerate(tokens[:length]):
        ids[i] = vocab.lookup(tok)
    return ids


def encode_batch(token_seqs, vocab: Vocab, length: int) -> np.ndarray:
    """Encode a list of token sequences into a [B, L] id matrix."""
    out = np.full((len(token_seqs), length), PAD_ID, dtype=np.int64)
    for row, seq in enumerate(token_seqs):
        for i, tok in enumerate(seq[:length]):
            out[row, i] = vocab.lookup(tok)
    return out
