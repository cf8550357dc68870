"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.utils.validation import check_array

from .vocab import Vocab


def check_grids(X, L: int, D: int) -> np.ndarray:
    """Return ``X`` as a finite float32 ``(n, L, D)`` array (a single ``(L, D)`` grid is promoted)."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_all_finite=True)
    if X.ndim != 3 or X.shape[1:] != (L, D):
        raise ValueError(f"expected feature grids of shape (n, {L}, {D}), got {X.shape}")
    return X


def check_texts(y: Sequence[str], L: int, vocab: Vocab) -> list[str]:
    if isinstance(y, str):
        raise ValueError("y must be a sequence of strings, not a single string")
    texts = [str(t) for t in y]
    for i, t in enumerate(texts):
        if len(t) > L:
            raise ValueError(f"y[{i}]={t!r} longer than max_len={L}")
        bad = [c for c in t if c not in vocab.characters]
        if bad:
            raise ValueError(f"y[{i}]={t!r}: symbol {bad[0]!r} not in charset")
    return texts


def check_consistent_length(X: np.ndarray, y: Sequence) -> None:
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
