"""Central finite-difference check of decoder gradients through the total loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import ModelConfig, gradients, init_params
from .noising import MaskStrategy, sample_training_noise, token_replace
from .training import total_loss
from .vocab import build_vocab


_MASK_ONLY = (MaskStrategy.RANDOM, MaskStrategy.FULL, MaskStrategy.FORWARD_AR, MaskStrategy.BACKWARD_AR)


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_coords: int
    worst: str

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-3


def tiny_batch(cfg: ModelConfig, seed: int = 0, batch: int = 4):
    """Random features plus a mixed denoising/correction batch in float64."""
    vocab = build_vocab("abcdefghijklmnopqrstuvwxyz"[: cfg.vocab_size - 2])
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((batch, cfg.S, cfg.D))
    Y = rng.integers(vocab.n_chars, size=(batch, cfg.L))
    inputs, masked, is_corr = [], [], []
    for b in range(batch):
        if b % 2:
            n = token_replace(Y[b], int(rng.integers(cfg.L + 1)), rng, vocab)
        else:
            n = sample_training_noise(Y[b], rng, vocab, strategies=_MASK_ONLY)
        inputs.append(n.ids)
        masked.append(n.masked)
        is_corr.append(bool(b % 2))
    return feats, np.stack(inputs), Y, np.stack(masked), np.array(is_corr)


def gradcheck(cfg: ModelConfig, n_coords: int = 200, h: float = 1e-4, seed: int = 0,
              floor: float = 1e-8) -> GradCheckResult:
    """Compare autograd with central differences on ``n_coords`` random coordinates.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``, all in float64.
    """
    model = init_params(cfg, seed, dtype=torch.float64)
    model.check_finite = False
    batch = tiny_batch(cfg, seed)

    def loss() -> torch.Tensor:
        return total_loss(model, *batch, warn_missing=False).total

    analytic = gradients(model, loss())
    params = dict(model.named_parameters())
    sizes = [(n, p.numel()) for n, p in params.items()]
    total = sum(s for _, s in sizes)
    rng = np.random.default_rng(seed + 1)
    flat_idx = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([0] + [s for _, s in sizes])
    worst, worst_err = "", 0.0
    with torch.no_grad():
        for fi in flat_idx:
            k = int(np.searchsorted(offsets, fi, side="right") - 1)
            name = sizes[k][0]
            j = int(fi - offsets[k])
            p = params[name].view(-1)
            orig = p[j].item()
            p[j] = orig + h
            up = loss().item()
            p[j] = orig - h
            down = loss().item()
            p[j] = orig
            num = (up - down) / (2 * h)
            ana = analytic[name].view(-1)[j].item()
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            if err > worst_err:
                worst, worst_err = f"{name}[{j}] analytic={ana:.3e} numeric={num:.3e}", err
    return GradCheckResult(worst_err, len(flat_idx), worst)
