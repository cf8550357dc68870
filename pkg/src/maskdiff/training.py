"""Denoising / correction objectives and the training loop."""

from __future__ import annotations

import enum
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, TextIO

import numpy as np
import torch

from .model import MaskDiffusionDecoder, NonFiniteError
from .noising import (ALL_STRATEGIES, CONFIDENCE_STRATEGIES, MaskStrategy, NoisedSeq, draw_strategy,
                      full_mask, noise_for_strategy, token_replace)
from .vocab import Vocab

log = logging.getLogger(__name__)


class Branch(enum.Enum):
    DENOISING = "denoising"
    CORRECTION = "correction"


class TrainingDiverged(NonFiniteError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 0.05
    warmup_steps: int = 250
    total_steps: int = 5000
    batch_size: int = 64
    branch_correction_prob: float = 0.5
    trn_enabled: bool = True
    mask_strategy_set: tuple = tuple(s.value for s in ALL_STRATEGIES)
    K: int = 3
    ckpt_every: int = 0

    def strategies(self) -> tuple[MaskStrategy, ...]:
        return tuple(MaskStrategy(s) for s in self.mask_strategy_set)


@dataclass
class TrainExample:
    Y: np.ndarray
    branch: Branch
    input: NoisedSeq
    n_noised: int
    feats: np.ndarray
    example_index: int = -1


# ---------------------------------------------------------------- losses

def _target_logp(log_probs: torch.Tensor, Y) -> torch.Tensor:
    Y = torch.as_tensor(np.asarray(Y), dtype=torch.long, device=log_probs.device)
    return log_probs.gather(-1, Y.unsqueeze(-1)).squeeze(-1)


def denoising_loss(log_probs: torch.Tensor, Y, masked) -> torch.Tensor:
    """Mean negative log-likelihood over masked positions only.

    ``log_probs`` is ``(..., L, V)``; the result has the leading batch shape.
    """
    m = torch.as_tensor(np.asarray(masked), dtype=log_probs.dtype, device=log_probs.device)
    l1 = m.sum(-1)
    if (l1 < 1).any():
        raise ValueError("denoising loss needs at least one masked position (l1 >= 1)")
    # where() so that -inf log-probs at unmasked positions cannot leak in as nan
    nll = torch.where(m > 0, -_target_logp(log_probs, Y), torch.zeros_like(m))
    return nll.sum(-1) / l1


def correction_loss(log_probs: torch.Tensor, Y) -> torch.Tensor:
    """Mean negative log-likelihood over every position."""
    return -_target_logp(log_probs, Y).mean(-1)


@dataclass
class LossTerms:
    total: torch.Tensor
    denoising: torch.Tensor
    correction: torch.Tensor
    n_denoising: int
    n_correction: int


def total_loss(model: MaskDiffusionDecoder, feats, inputs, targets, masked, is_correction,
               warn_missing: bool = True) -> LossTerms:
    """Batch mean of denoising rows plus batch mean of correction rows."""
    dtype = model.dtype
    feats = torch.as_tensor(np.asarray(feats), dtype=dtype)
    inputs = torch.as_tensor(np.asarray(inputs), dtype=torch.long)
    is_corr = np.asarray(is_correction, dtype=bool)
    log_probs = model(feats, inputs).log_softmax(-1)
    zero = log_probs.sum() * 0.0
    den_rows, cor_rows = np.flatnonzero(~is_corr), np.flatnonzero(is_corr)
    targets = np.asarray(targets)
    masked = np.asarray(masked)
    if len(den_rows):
        ld = denoising_loss(log_probs[den_rows], targets[den_rows], masked[den_rows]).mean()
    else:
        ld = zero
        if warn_missing:
            log.warning("batch has no denoising examples; denoising term is 0")
    if len(cor_rows):
        lc = correction_loss(log_probs[cor_rows], targets[cor_rows]).mean()
    else:
        lc = zero
        if warn_missing:
            log.warning("batch has no correction examples; correction term is 0")
    return LossTerms(ld + lc, ld, lc, len(den_rows), len(cor_rows))


def total_loss_examples(model: MaskDiffusionDecoder, batch: Sequence[TrainExample],
                        warn_missing: bool = True) -> LossTerms:
    return total_loss(
        model,
        np.stack([ex.feats for ex in batch]),
        np.stack([ex.input.ids for ex in batch]),
        np.stack([ex.Y for ex in batch]),
        np.stack([ex.input.masked for ex in batch]),
        [ex.branch is Branch.CORRECTION for ex in batch],
        warn_missing=warn_missing,
    )


# ---------------------------------------------------------------- optimisation

def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``cfg.lr`` then cosine decay to 0 at ``total_steps``."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    if step >= cfg.total_steps:
        return 0.0
    span = max(cfg.total_steps - cfg.warmup_steps, 1)
    frac = (step - cfg.warmup_steps) / span
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                             betas=(0.9, 0.999), eps=1e-8)


def grad_norm(model: torch.nn.Module) -> float:
    sq = sum(float((p.grad.double() ** 2).sum()) for p in model.parameters() if p.grad is not None)
    return math.sqrt(sq)


def train_step(model: MaskDiffusionDecoder, opt: torch.optim.Optimizer, batch: Sequence[TrainExample],
               step: int, cfg: TrainConfig) -> dict:
    """One AdamW update at ``lr_schedule(step)``; returns the step's metrics."""
    t0 = time.perf_counter()
    lr = lr_schedule(step, cfg)
    for group in opt.param_groups:
        group["lr"] = lr
    opt.zero_grad(set_to_none=False)
    terms = total_loss_examples(model, batch, warn_missing=_expects_both(cfg))
    if not torch.isfinite(terms.total):
        dump = {
            "step": step, "lr": lr,
            "loss_d": float(terms.denoising.detach()), "loss_c": float(terms.correction.detach()),
            "param_norms": {n: float(p.detach().norm()) for n, p in model.named_parameters()},
            "example_indices": [ex.example_index for ex in batch],
        }
        raise TrainingDiverged(f"non-finite loss at step {step}: {json.dumps(dump)[:400]}", dump)
    terms.total.backward()
    gn = grad_norm(model)
    opt.step()
    return {
        "step": step,
        "loss_d": float(terms.denoising.detach()),
        "loss_c": float(terms.correction.detach()),
        "lr": lr,
        "grad_norm": gn,
        "wall_ms": (time.perf_counter() - t0) * 1e3,
    }


def _expects_both(cfg: TrainConfig) -> bool:
    return cfg.trn_enabled and 0.0 < cfg.branch_correction_prob < 1.0


# ---------------------------------------------------------------- batch assembly

def example_rng(seed: int, example_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(example_index)])


def build_batch(model: MaskDiffusionDecoder, targets: np.ndarray, feats: np.ndarray, step: int,
                cfg: TrainConfig, seed: int, vocab: Vocab) -> List[TrainExample]:
    """Assemble batch ``step`` (0-based); example ``j`` is fully determined by
    ``(seed, step * batch_size + j)`` plus the current parameters."""
    strategies = cfg.strategies()
    B = cfg.batch_size
    out: List[Optional[TrainExample]] = [None] * B
    pending = []  # rows that need confidences from the current model
    for j in range(B):
        idx = step * B + j
        rng = example_rng(seed, idx)
        k = int(rng.integers(len(targets)))
        Y, F = targets[k], feats[k]
        if cfg.trn_enabled and rng.random() < cfg.branch_correction_prob:
            noised = token_replace(Y, int(rng.integers(0, len(Y) + 1)), rng, vocab)
            out[j] = TrainExample(Y, Branch.CORRECTION, noised, int(noised.replaced.sum()), F, idx)
            continue
        kind = draw_strategy(rng, strategies)
        if kind in CONFIDENCE_STRATEGIES:
            pending.append((j, idx, rng, kind, Y, F))
            continue
        noised = noise_for_strategy(Y, kind, rng, vocab, K=cfg.K, refinement_replace=cfg.trn_enabled)
        if kind is MaskStrategy.REFINEMENT:
            out[j] = TrainExample(Y, Branch.CORRECTION, noised, int(noised.replaced.sum()), F, idx)
        else:
            out[j] = TrainExample(Y, Branch.DENOISING, noised, noised.pattern.n_masked, F, idx)
    if pending:
        L = targets.shape[1]
        fm = np.stack([full_mask(p[4], vocab).ids for p in pending])
        pred = model.predict(np.stack([p[5] for p in pending]), fm)
        conf, arg = pred.conf.double().numpy(), pred.argmax.numpy()
        for r, (j, idx, rng, kind, Y, F) in enumerate(pending):
            noised = noise_for_strategy(Y, kind, rng, vocab, aux=(conf[r], arg[r]), K=min(cfg.K, L))
            out[j] = TrainExample(Y, Branch.DENOISING, noised, noised.pattern.n_masked, F, idx)
    return out  # type: ignore[return-value]


MetricsSink = Callable[[dict], None]


def jsonl_sink(fh: TextIO) -> MetricsSink:
    def write(rec: dict) -> None:
        fh.write(json.dumps(rec) + "\n")
    return write


def train_loop(model: MaskDiffusionDecoder, cfg: TrainConfig, targets: np.ndarray, feats: np.ndarray,
               seed: int, vocab: Vocab, metrics: Optional[MetricsSink] = None,
               on_checkpoint: Optional[Callable[[MaskDiffusionDecoder, int], None]] = None,
               log_every: int = 0) -> MaskDiffusionDecoder:
    """Train ``model`` in place for ``cfg.total_steps`` steps.

    ``targets`` is ``(n, L)`` token ids and ``feats`` is ``(n, S, D)``. Runs are
    bit-reproducible for a fixed seed in single-threaded torch.
    """
    targets = np.asarray(targets, dtype=np.int64)
    feats = np.asarray(feats, dtype=np.float32)
    model.train()
    opt = make_optimizer(model, cfg)
    for step in range(cfg.total_steps):
        batch = build_batch(model, targets, feats, step, cfg, seed, vocab)
        rec = train_step(model, opt, batch, step + 1, cfg)
        if metrics is not None:
            metrics(rec)
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d loss_d %.4f loss_c %.4f lr %.2e", rec["step"], rec["loss_d"], rec["loss_c"], rec["lr"])
        if on_checkpoint is not None and cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0:
            on_checkpoint(model, step + 1)
    model.eval()
    return model
