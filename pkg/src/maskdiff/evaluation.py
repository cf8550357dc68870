"""Word accuracy, per-policy evaluation and the injected-error correction probe."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from .inference import CountingPredictor, PolicyKind, as_predictor, make_policy, refine_once, run
from .vocab import Vocab, decode, encode_batch

ALL_POLICIES = ("pd", "ar", "re", "lc", "blc")


def word_accuracy(preds: Sequence[str], refs: Sequence[str]) -> float:
    """Fraction of exact (case-sensitive) string matches."""
    if len(preds) != len(refs):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(refs)} references")
    if not refs:
        raise ValueError("empty evaluation set")
    return sum(p == r for p, r in zip(preds, refs)) / len(refs)


def occluded_in_text(texts: Sequence[str], occluded: np.ndarray) -> np.ndarray:
    """Rows with at least one occluded position inside the word itself."""
    return np.array([bool(occluded[i, :len(t)].any()) for i, t in enumerate(texts)], dtype=bool)


@dataclass
class PolicyReport:
    policy: str
    K: int
    word_accuracy: float
    occluded_accuracy: float
    forwards_per_sample: int
    median_ms: float


@dataclass
class EvalReport:
    word_accuracy: float
    occluded_accuracy: float
    n_samples: int
    n_occluded: int
    per_policy: Dict[str, PolicyReport] = field(default_factory=dict)
    primary: str = "blc"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_policy"] = {k: asdict(v) for k, v in self.per_policy.items()}
        return d


def decode_all(ids: np.ndarray, vocab: Vocab) -> list[str]:
    return [decode(row, vocab) for row in ids]


def evaluate_policy(model, X: np.ndarray, texts: Sequence[str], occ_rows: np.ndarray, vocab: Vocab,
                    policy: str, K: Optional[int] = None, timing_samples: int = 0,
                    batch_size: int = 500) -> PolicyReport:
    """Batched accuracy plus median single-sample wall time over ``timing_samples`` rows."""
    L = X.shape[1]
    pol = make_policy(policy, L, K)
    counter = CountingPredictor(model)
    outs = []
    for s in range(0, len(X), batch_size):
        calls0 = counter.calls
        out, _ = run(counter, X[s:s + batch_size], pol, vocab)
        outs.append(out)
        forwards = counter.calls - calls0
    strings = decode_all(np.concatenate(outs), vocab)
    correct = np.array([p == t for p, t in zip(strings, texts)])
    times = []
    predictor = as_predictor(model)
    for i in range(min(timing_samples, len(X))):
        t0 = time.perf_counter()
        run(predictor, X[i], pol, vocab)
        times.append((time.perf_counter() - t0) * 1e3)
    return PolicyReport(
        policy=pol.kind.value,
        K=pol.K,
        word_accuracy=float(correct.mean()),
        occluded_accuracy=float(correct[occ_rows].mean()) if occ_rows.any() else float("nan"),
        forwards_per_sample=forwards,
        median_ms=float(np.median(times)) if times else float("nan"),
    )


def evaluate(model, X: np.ndarray, texts: Sequence[str], occluded: np.ndarray, vocab: Vocab,
             policies: Iterable[str] = ALL_POLICIES, K: int = 3, primary: str = "blc",
             timing_samples: int = 0) -> EvalReport:
    occ_rows = occluded_in_text(texts, occluded)
    per = {}
    for p in policies:
        kind = PolicyKind(p)
        k = None if kind in (PolicyKind.PD, PolicyKind.AR, PolicyKind.RE) else K
        per[p] = evaluate_policy(model, X, texts, occ_rows, vocab, p, k, timing_samples)
    head = per[primary] if primary in per else next(iter(per.values()))
    return EvalReport(head.word_accuracy, head.occluded_accuracy, len(texts), int(occ_rows.sum()),
                      per, head.policy)


def inject_errors(texts: Sequence[str], L: int, vocab: Vocab, n_replace: int,
                  seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ground-truth ids with ``n_replace`` in-word characters swapped for other characters.

    Returns ``(corrupted_ids, clean_ids, replaced_mask)``.
    """
    rng = np.random.default_rng(seed)
    clean = encode_batch(texts, L, vocab)
    ids = clean.copy()
    rep = np.zeros_like(clean, dtype=bool)
    for i, t in enumerate(texts):
        for p in rng.choice(len(t), size=min(n_replace, len(t)), replace=False):
            r = int(rng.integers(vocab.n_chars - 1))
            ids[i, p] = r if r < clean[i, p] else r + 1
            rep[i, p] = True
    return ids, clean, rep


def correction_probe(model, X: np.ndarray, texts: Sequence[str], vocab: Vocab,
                     n_replace: int = 2, seed: int = 0) -> dict:
    """Feed corrupted ground truth unmasked, run one pass, count restored characters."""
    ids, clean, rep = inject_errors(texts, X.shape[1], vocab, n_replace, seed)
    out = refine_once(model, X, ids)
    return {
        "corrected_fraction": float((out[rep] == clean[rep]).mean()),
        "word_accuracy": word_accuracy(decode_all(out, vocab), list(texts)),
    }
