"""Character vocabulary with two trailing special tokens ([MASK], [PAD])."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_CHARSET = string.ascii_lowercase
# 94 printable ASCII symbols, the English recognition charset.
PRINTABLE_94 = "".join(chr(c) for c in range(33, 127))
MASK_GLYPH = "␣M"


@dataclass(frozen=True)
class Vocab:
    characters: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.characters)})

    @property
    def n_chars(self) -> int:
        return len(self.characters)

    @property
    def mask_id(self) -> int:
        return len(self.characters)

    @property
    def pad_id(self) -> int:
        return len(self.characters) + 1

    @property
    def size(self) -> int:
        return len(self.characters) + 2

    def id_of(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise ValueError(f"unknown symbol {symbol!r}") from None


def build_vocab(charset: Iterable[str] = DEFAULT_CHARSET) -> Vocab:
    chars = tuple(charset)
    if not chars:
        raise ValueError("charset must be non-empty")
    seen: set[str] = set()
    for c in chars:
        if c in seen:
            raise ValueError(f"duplicate symbol {c!r} in charset")
        seen.add(c)
    return Vocab(chars)


def encode(text: str, L: int, vocab: Vocab) -> np.ndarray:
    """Encode ``text`` as a length-``L`` id array, suffix-padded with PAD."""
    if len(text) > L:
        raise ValueError(f"text {text!r} too long: {len(text)} > L={L}")
    ids = np.full(L, vocab.pad_id, dtype=np.int64)
    for i, c in enumerate(text):
        ids[i] = vocab.id_of(c)
    return ids


def encode_batch(texts: Sequence[str], L: int, vocab: Vocab) -> np.ndarray:
    return np.stack([encode(t, L, vocab) for t in texts]) if texts else np.zeros((0, L), np.int64)


def decode(ids: Sequence[int], vocab: Vocab) -> str:
    """Characters up to the first PAD; MASK renders as the placeholder glyph."""
    out = []
    for t in np.asarray(ids).tolist():
        if t == vocab.pad_id:
            break
        if t == vocab.mask_id:
            out.append(MASK_GLYPH)
        else:
            out.append(vocab.characters[t])
    return "".join(out)


def is_canonical(ids: Sequence[int], vocab: Vocab) -> bool:
    """True if no non-PAD token follows a PAD (ground-truth form)."""
    ids = np.asarray(ids)
    pad = ids == vocab.pad_id
    if not pad.any():
        return True
    first = int(np.argmax(pad))
    return bool(pad[first:].all())
