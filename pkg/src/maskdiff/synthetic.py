"""Synthetic per-character feature grids standing in for a visual encoder.

Each position ``i`` of a length-``L`` label gets the fixed codebook vector of
its token plus Gaussian noise. Positions may be occluded (zeroed) or
substituted (vector of a different character), which forces the decoder to
use context to recover the word.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .vocab import Vocab, encode


@dataclass
class CorruptionConfig:
    occlusion_rate: float = 0.0
    substitution_rate: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        for name in ("occlusion_rate", "substitution_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} not in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma={self.noise_sigma} must be >= 0")


@dataclass
class FeatureGrid:
    values: np.ndarray
    occluded: np.ndarray
    substituted: np.ndarray


@dataclass
class Sample:
    text: str
    grid: FeatureGrid


@dataclass
class Dataset:
    """Pre-rendered train/eval samples sharing one codebook."""

    train: list[Sample]
    eval: list[Sample]
    codebook: np.ndarray
    seed: int

    def arrays(self, split: str = "train"):
        samples = self.train if split == "train" else self.eval
        X = np.stack([s.grid.values for s in samples]).astype(np.float32)
        occ = np.stack([s.grid.occluded for s in samples])
        sub = np.stack([s.grid.substituted for s in samples])
        return [s.text for s in samples], X, occ, sub


def bundled_lexicon_path() -> Path:
    return Path(str(resources.files("maskdiff") / "data" / "lexicon_en500.txt"))


def load_lexicon(path, vocab: Optional[Vocab] = None, L: Optional[int] = None) -> list[str]:
    """Read one word per line, dropping duplicates but keeping first-seen order."""
    words: list[str] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            w = raw.rstrip("\n").rstrip("\r")
            if not w:
                raise ValueError(f"line {lineno}: empty word")
            if vocab is not None:
                bad = [c for c in w if c not in vocab.characters]
                if bad:
                    raise ValueError(f"line {lineno}: symbol {bad[0]!r} not in charset")
            if L is not None and len(w) > L:
                raise ValueError(f"line {lineno}: word {w!r} longer than L={L}")
            if w not in seen:
                seen.add(w)
                words.append(w)
    if not words:
        raise ValueError(f"empty lexicon: {path}")
    return words


def make_codebook(vocab: Vocab, D: int, seed: int) -> np.ndarray:
    """Random unit vectors, one per character plus one for PAD (row ``pad_id``).

    The MASK row is left at zero; it is never rendered.
    """
    rng = np.random.default_rng([seed, 0xC0DE])
    book = np.zeros((vocab.size, D))
    rows = list(range(vocab.n_chars)) + [vocab.pad_id]
    v = rng.standard_normal((len(rows), D))
    book[rows] = v / np.linalg.norm(v, axis=1, keepdims=True)
    return book


def render_features(Y, cfg: CorruptionConfig, rng: np.random.Generator,
                    codebook: np.ndarray, vocab: Vocab) -> FeatureGrid:
    """Render one label as an ``L x D`` grid (``S = L``, positions aligned).

    Substitution picks uniformly among the other characters; a PAD position
    is substituted by any character.
    """
    Y = np.asarray(Y, dtype=np.int64)
    L, D = len(Y), codebook.shape[1]
    noise = rng.standard_normal((L, D)) * cfg.noise_sigma
    u_occ = rng.random(L)
    u_sub = rng.random(L)
    alt = rng.integers(vocab.n_chars - 1, size=L)
    occluded = u_occ < cfg.occlusion_rate
    substituted = ~occluded & (u_sub < cfg.substitution_rate)
    src = Y.copy()
    for i in np.flatnonzero(substituted):
        if Y[i] < vocab.n_chars:
            src[i] = alt[i] if alt[i] < Y[i] else alt[i] + 1
        else:
            src[i] = alt[i]
    values = codebook[src] + noise
    values[occluded] = 0.0
    return FeatureGrid(values, occluded, substituted)


def _split_key(seed: int, word: str, split: str) -> int:
    h = hashlib.sha256(f"{seed}\x00{split}\x00{word}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def _render_split(lexicon: Sequence[str], n: int, cfg: CorruptionConfig, seed: int,
                  split: str, codebook: np.ndarray, vocab: Vocab, L: int) -> list[Sample]:
    pick = np.random.default_rng([seed, 1 if split == "train" else 2])
    idx = pick.integers(len(lexicon), size=n)
    out = []
    for i, w in enumerate(idx):
        word = lexicon[int(w)]
        # per-sample stream keyed by (seed, split, word) and index: eval noise
        # never coincides with a train instance of the same word
        rng = np.random.default_rng([_split_key(seed, word, split), i])
        out.append(Sample(word, render_features(encode(word, L, vocab), cfg, rng, codebook, vocab)))
    return out


def gen_dataset(lexicon: Sequence[str], n: int, cfg: CorruptionConfig, seed: int,
                vocab: Vocab, L: int, D: int, n_eval: int = 0) -> Dataset:
    """Pure function of its arguments: the same seed gives bit-identical grids."""
    if n < 1:
        raise ValueError("n must be >= 1")
    book = make_codebook(vocab, D, seed)
    train = _render_split(lexicon, n, cfg, seed, "train", book, vocab, L)
    ev = _render_split(lexicon, n_eval, cfg, seed, "eval", book, vocab, L) if n_eval else []
    return Dataset(train, ev, book, seed)


def nearest_codebook(values: np.ndarray, codebook: np.ndarray, vocab: Vocab) -> np.ndarray:
    """Per-position nearest codebook row (context-free baseline classifier)."""
    rows = np.r_[np.arange(vocab.n_chars), vocab.pad_id]
    d = ((values[..., None, :] - codebook[rows]) ** 2).sum(-1)
    return rows[np.argmin(d, axis=-1)]
