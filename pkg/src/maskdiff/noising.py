"""Training-time corruption of target sequences.

Seven mask strategies (random, full, forward/backward AR, refinement,
low-confidence, block low-confidence) plus token replacement. All functions
take an explicit ``numpy.random.Generator`` and never touch global state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .vocab import Vocab


class MaskStrategy(enum.Enum):
    RANDOM = "random"
    FULL = "full"
    FORWARD_AR = "forward_ar"
    BACKWARD_AR = "backward_ar"
    REFINEMENT = "refinement"
    LOW_CONF = "low_conf"
    BLOCK_LOW_CONF = "block_low_conf"


ALL_STRATEGIES: Tuple[MaskStrategy, ...] = tuple(MaskStrategy)
CONFIDENCE_STRATEGIES = (MaskStrategy.LOW_CONF, MaskStrategy.BLOCK_LOW_CONF)


class KeptSource(enum.Enum):
    GROUND_TRUTH = "ground_truth"
    MODEL_PREDICTION = "model_prediction"


class Direction(enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass
class MaskPattern:
    masked: np.ndarray
    kept_source: KeptSource = KeptSource.GROUND_TRUTH

    @property
    def n_masked(self) -> int:
        return int(self.masked.sum())


@dataclass
class NoisedSeq:
    ids: np.ndarray
    pattern: MaskPattern
    replaced: np.ndarray
    strategy: Optional[MaskStrategy] = None

    @property
    def masked(self) -> np.ndarray:
        return self.pattern.masked


# (conf, preds) for one sequence, or a zero-arg callable producing it lazily.
ConfidenceSource = Union[Tuple[np.ndarray, np.ndarray], Callable[[], Tuple[np.ndarray, np.ndarray]]]


def _as_ids(Y) -> np.ndarray:
    return np.asarray(Y, dtype=np.int64)


def _from_mask(Y: np.ndarray, masked: np.ndarray, vocab: Vocab,
               strategy: Optional[MaskStrategy] = None,
               kept: Optional[np.ndarray] = None,
               kept_source: KeptSource = KeptSource.GROUND_TRUTH) -> NoisedSeq:
    base = Y if kept is None else _as_ids(kept)
    ids = np.where(masked, vocab.mask_id, base)
    return NoisedSeq(ids, MaskPattern(masked, kept_source), np.zeros_like(masked), strategy)


def random_mask(Y, l1: int, rng: np.random.Generator, vocab: Vocab) -> NoisedSeq:
    """Mask exactly ``l1`` positions chosen uniformly without replacement."""
    Y = _as_ids(Y)
    L = len(Y)
    if not 1 <= l1 <= L:
        raise ValueError(f"l1={l1} out of range [1, {L}]")
    masked = np.zeros(L, dtype=bool)
    masked[rng.choice(L, size=l1, replace=False)] = True
    return _from_mask(Y, masked, vocab, MaskStrategy.RANDOM)


def full_mask(Y, vocab: Vocab) -> NoisedSeq:
    Y = _as_ids(Y)
    return _from_mask(Y, np.ones(len(Y), dtype=bool), vocab, MaskStrategy.FULL)


def ar_mask(Y, t: int, direction: Direction, vocab: Vocab) -> NoisedSeq:
    """Autoregressive pattern with split index ``t`` (1-based).

    Forward keeps the first ``t - 1`` tokens and masks the rest; backward is
    the mirror image (keeps the last ``t - 1``).
    """
    Y = _as_ids(Y)
    L = len(Y)
    if not 1 <= t <= L:
        raise ValueError(f"t={t} out of range [1, {L}]")
    masked = np.zeros(L, dtype=bool)
    masked[t - 1:] = True
    if direction is Direction.BACKWARD:
        masked = masked[::-1].copy()
        strategy = MaskStrategy.BACKWARD_AR
    else:
        strategy = MaskStrategy.FORWARD_AR
    return _from_mask(Y, masked, vocab, strategy)


def blocks(L: int, K: int) -> list[range]:
    """Split ``[0, L)`` into ``K`` contiguous blocks; the first ``L % K`` get one extra."""
    if K < 1:
        raise ValueError(f"K={K} must be >= 1")
    if L < K:
        raise ValueError(f"L={L} < K={K}: cannot form {K} non-empty blocks")
    base, extra = divmod(L, K)
    out, start = [], 0
    for b in range(K):
        size = base + (1 if b < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


def low_conf_mask(conf: np.ndarray) -> np.ndarray:
    conf = np.asarray(conf, dtype=np.float64)
    return conf < conf.mean()


def block_low_conf_mask(conf: np.ndarray, block: range) -> np.ndarray:
    conf = np.asarray(conf, dtype=np.float64)
    masked = np.zeros(len(conf), dtype=bool)
    idx = np.arange(block.start, block.stop)
    masked[idx] = conf[idx] < conf[idx].mean()
    return masked


def confidence_pattern(conf, preds, kind: MaskStrategy, K: int = 1,
                       rng: Optional[np.random.Generator] = None) -> MaskPattern:
    """Low-confidence pattern: positions strictly below the mean confidence.

    For ``BLOCK_LOW_CONF`` one of the ``K`` blocks is picked uniformly and
    the mean is taken within that block only. ``preds`` fill kept positions
    (see :func:`apply_confidence_pattern`).
    """
    conf = np.asarray(conf, dtype=np.float64)
    if kind is MaskStrategy.LOW_CONF:
        masked = low_conf_mask(conf)
    elif kind is MaskStrategy.BLOCK_LOW_CONF:
        if rng is None:
            raise ValueError("BLOCK_LOW_CONF needs an rng to choose the block")
        bl = blocks(len(conf), K)
        masked = block_low_conf_mask(conf, bl[int(rng.integers(K))])
    else:
        raise ValueError(f"{kind} is not a confidence strategy")
    return MaskPattern(masked, KeptSource.MODEL_PREDICTION)


def token_replace(Y, l2: int, rng: np.random.Generator, vocab: Vocab) -> NoisedSeq:
    """Replace ``l2`` uniformly chosen positions with a different character.

    Replacement symbols come from the character set only, so MASK and PAD are
    never written; PAD positions may be overwritten by a character.
    """
    Y = _as_ids(Y)
    L = len(Y)
    if not 0 <= l2 <= L:
        raise ValueError(f"l2={l2} out of range [0, {L}]")
    if vocab.n_chars < 2:
        raise ValueError("token replacement needs at least two characters")
    ids = Y.copy()
    replaced = np.zeros(L, dtype=bool)
    for pos in rng.choice(L, size=l2, replace=False):
        orig = ids[pos]
        if orig < vocab.n_chars:
            # uniform over the n_chars - 1 other characters
            r = int(rng.integers(vocab.n_chars - 1))
            ids[pos] = r if r < orig else r + 1
        else:
            ids[pos] = int(rng.integers(vocab.n_chars))
        replaced[pos] = True
    return NoisedSeq(ids, MaskPattern(np.zeros(L, dtype=bool)), replaced, None)


def draw_strategy(rng: np.random.Generator,
                  strategies: Sequence[MaskStrategy] = ALL_STRATEGIES) -> MaskStrategy:
    return strategies[int(rng.integers(len(strategies)))]


def _resolve_aux(aux: Optional[ConfidenceSource]) -> Tuple[np.ndarray, np.ndarray]:
    if aux is None:
        raise ValueError("confidence strategy drawn but no auxiliary confidence provider given")
    conf, preds = aux() if callable(aux) else aux
    return np.asarray(conf, dtype=np.float64), _as_ids(preds)


def noise_for_strategy(Y, kind: MaskStrategy, rng: np.random.Generator, vocab: Vocab,
                       aux: Optional[ConfidenceSource] = None, K: int = 3,
                       refinement_replace: bool = True) -> NoisedSeq:
    """Build one training input for an already-drawn strategy.

    Refinement inputs are unmasked; with ``refinement_replace`` they carry
    ``Uniform[0, L]`` token replacements and are meant for the correction
    objective. Confidence patterns that come out empty (all confidences equal)
    fall back to masking the single least-confident position in scope, so a
    denoising example always supervises at least one token.
    """
    Y = _as_ids(Y)
    L = len(Y)
    if kind is MaskStrategy.RANDOM:
        return random_mask(Y, int(rng.integers(1, L + 1)), rng, vocab)
    if kind is MaskStrategy.FULL:
        return full_mask(Y, vocab)
    if kind in (MaskStrategy.FORWARD_AR, MaskStrategy.BACKWARD_AR):
        t = int(rng.integers(1, L + 1))
        d = Direction.FORWARD if kind is MaskStrategy.FORWARD_AR else Direction.BACKWARD
        return ar_mask(Y, t, d, vocab)
    if kind is MaskStrategy.REFINEMENT:
        l2 = int(rng.integers(0, L + 1)) if refinement_replace else 0
        out = token_replace(Y, l2, rng, vocab)
        out.strategy = MaskStrategy.REFINEMENT
        return out
    conf, preds = _resolve_aux(aux)
    if kind is MaskStrategy.LOW_CONF:
        pattern = confidence_pattern(conf, preds, kind)
        scope = np.arange(L)
    else:
        b = blocks(L, K)[int(rng.integers(K))]
        pattern = MaskPattern(block_low_conf_mask(conf, b), KeptSource.MODEL_PREDICTION)
        scope = np.arange(b.start, b.stop)
    if not pattern.masked.any():
        pattern.masked[scope[int(np.argmin(conf[scope]))]] = True
    return _from_mask(Y, pattern.masked, vocab, kind, kept=preds,
                      kept_source=KeptSource.MODEL_PREDICTION)


def sample_training_noise(Y, rng: np.random.Generator, vocab: Vocab,
                          aux: Optional[ConfidenceSource] = None,
                          strategies: Sequence[MaskStrategy] = ALL_STRATEGIES,
                          K: int = 3, refinement_replace: bool = True) -> NoisedSeq:
    """Draw a strategy uniformly from ``strategies`` and apply it to ``Y``."""
    kind = draw_strategy(rng, strategies)
    return noise_for_strategy(Y, kind, rng, vocab, aux=aux, K=K,
                              refinement_replace=refinement_replace)
