"""K-step denoising from an all-[MASK] sequence under a remask policy.

Policies: PD (one parallel pass), AR (left-to-right, one token committed per
pass), Re (unmasked refinement passes), LC (remask below global mean
confidence) and BLC (remask below block mean, one block per remask event).
States are batched: arrays are ``(B, L)`` and all rows advance in lockstep.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import torch

from .noising import block_low_conf_mask, blocks, low_conf_mask
from .vocab import Vocab, decode

# (feats (B,S,D), ids (B,L)) -> probs (B,L,V)
Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]


class PolicyKind(enum.Enum):
    PD = "pd"
    AR = "ar"
    RE = "re"
    LC = "lc"
    BLC = "blc"


DEFAULT_STEPS = {PolicyKind.RE: 2, PolicyKind.LC: 3, PolicyKind.BLC: 3}


@dataclass(frozen=True)
class RemaskPolicy:
    kind: PolicyKind
    K: int

    def validate(self, L: int) -> None:
        if self.kind is PolicyKind.PD and self.K != 1:
            raise ValueError(f"PD runs exactly one step, got K={self.K}")
        if self.kind is PolicyKind.AR and self.K != L:
            raise ValueError(f"AR runs exactly L={L} steps, got K={self.K}")
        if self.K < 1:
            raise ValueError(f"K={self.K} must be >= 1")
        if self.kind is PolicyKind.BLC and self.K > L:
            raise ValueError(f"BLC needs K <= L, got K={self.K}, L={L}")


def make_policy(kind: Union[str, PolicyKind], L: int, K: Optional[int] = None) -> RemaskPolicy:
    """Policy with the step count forced (PD, AR) or defaulted (Re 2, LC/BLC 3)."""
    kind = PolicyKind(kind) if not isinstance(kind, PolicyKind) else kind
    if kind is PolicyKind.PD:
        K = 1 if K is None else K
    elif kind is PolicyKind.AR:
        K = L if K is None else K
    elif K is None:
        K = DEFAULT_STEPS[kind]
    policy = RemaskPolicy(kind, int(K))
    policy.validate(L)
    return policy


@dataclass
class DenoiseState:
    step: int
    current: np.ndarray
    frozen: np.ndarray
    preds: Optional[np.ndarray] = None
    conf: Optional[np.ndarray] = None

    @property
    def L(self) -> int:
        return self.current.shape[-1]


@dataclass
class TraceStep:
    step: int
    current: np.ndarray
    preds: np.ndarray
    conf: np.ndarray
    remasked: np.ndarray
    frozen: np.ndarray


Trace = List[TraceStep]


def init_state(L: int, vocab: Vocab, batch: int = 1) -> DenoiseState:
    return DenoiseState(
        step=1,
        current=np.full((batch, L), vocab.mask_id, dtype=np.int64),
        frozen=np.zeros((batch, L), dtype=bool),
    )


def as_predictor(model) -> Predictor:
    """Wrap a decoder module as a numpy predictor; plain callables pass through."""
    if isinstance(model, torch.nn.Module):
        def predict(feats: np.ndarray, ids: np.ndarray) -> np.ndarray:
            return model.predict(feats, ids).probs.double().numpy()
        return predict
    return model


class CountingPredictor:
    """Predictor wrapper that counts forward calls (one call = one pass per row)."""

    def __init__(self, predictor):
        self.inner = as_predictor(predictor)
        self.calls = 0

    def __call__(self, feats, ids):
        self.calls += 1
        return self.inner(feats, ids)


def denoise_step(predictor, feats: np.ndarray, state: DenoiseState) -> DenoiseState:
    """Predict every position; argmax ties go to the lowest id.

    Frozen (committed) positions keep their committed token.
    """
    probs = np.asarray(as_predictor(predictor)(feats, state.current))
    preds = probs.argmax(-1).astype(np.int64)
    conf = np.take_along_axis(probs, preds[..., None], -1)[..., 0]
    preds = np.where(state.frozen, state.current, preds)
    return replace(state, preds=preds, conf=conf)


def remask(state: DenoiseState, policy: RemaskPolicy, vocab: Vocab) -> DenoiseState:
    """Apply the inference remask rule to a predicted state, giving step ``i + 1``."""
    if state.step >= policy.K:
        raise ValueError(f"remask called at step {state.step} >= K={policy.K}")
    if state.preds is None:
        raise ValueError("remask needs a state with predictions (call denoise_step first)")
    i, L = state.step, state.L
    preds, frozen = state.preds, state.frozen.copy()
    kind = policy.kind
    if kind is PolicyKind.PD:
        raise ValueError("PD has no remask step")
    if kind is PolicyKind.AR:
        frozen[:, i - 1] = True
        masked = np.zeros_like(frozen)
        masked[:, i:] = True
    elif kind is PolicyKind.RE:
        masked = np.zeros_like(frozen)
    elif kind is PolicyKind.LC:
        masked = np.stack([low_conf_mask(c) for c in state.conf])
    elif kind is PolicyKind.BLC:
        b = blocks(L, policy.K)[i - 1]
        masked = np.stack([block_low_conf_mask(c, b) for c in state.conf])
        in_block = np.zeros(L, dtype=bool)
        in_block[b.start:b.stop] = True
        frozen |= in_block & ~masked
    else:  # pragma: no cover
        raise ValueError(kind)
    current = np.where(masked, vocab.mask_id, preds)
    return DenoiseState(step=i + 1, current=current, frozen=frozen)


def run(predictor, feats, policy: RemaskPolicy, vocab: Vocab,
        L: Optional[int] = None) -> Tuple[np.ndarray, Trace]:
    """Decode ``feats`` (``(S, D)`` or ``(B, S, D)``) with ``K`` forward passes.

    Returns the step-``K`` predictions (shape matching the input batching) and
    a ``K``-entry trace.
    """
    predictor = as_predictor(predictor)
    feats = np.asarray(feats)
    single = feats.ndim == 2
    if single:
        feats = feats[None]
    L = feats.shape[1] if L is None else L
    policy.validate(L)
    state = init_state(L, vocab, batch=feats.shape[0])
    trace: Trace = []
    while True:
        state = denoise_step(predictor, feats, state)
        if state.step == policy.K:
            trace.append(TraceStep(state.step, state.current, state.preds, state.conf,
                                   np.zeros_like(state.frozen), state.frozen))
            break
        nxt = remask(state, policy, vocab)
        trace.append(TraceStep(state.step, state.current, state.preds, state.conf,
                               nxt.current == vocab.mask_id, state.frozen))
        state = nxt
    out = state.preds
    return (out[0], trace) if single else (out, trace)


def trace_records(trace: Trace, vocab: Vocab, row: int = 0) -> list[dict]:
    """One JSON-ready record per step: input/pred strings, confidences, remasked positions."""
    return [
        {
            "step": t.step,
            "input_string": decode(t.current[row], vocab),
            "pred_string": decode(t.preds[row], vocab),
            "conf": [round(float(c), 6) for c in t.conf[row]],
            "remasked": [int(p) for p in np.flatnonzero(t.remasked[row])],
        }
        for t in trace
    ]


def refine_once(predictor, feats, ids) -> np.ndarray:
    """One unmasked re-prediction pass over given token inputs (error-correction probe)."""
    probs = np.asarray(as_predictor(predictor)(np.asarray(feats), np.asarray(ids)))
    return probs.argmax(-1).astype(np.int64)
