"""Conditional transformer decoder over noised token sequences.

Token embedding plus learned positions, ``N`` pre-norm blocks of
{bidirectional self-attention, cross-attention to the feature grid,
feed-forward}, a final norm and an untied classifier.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, NamedTuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    L: int = 12
    vocab_size: int = 28
    D: int = 64
    N: int = 2
    heads: int = 4
    d_ff: int = 256
    S: int = 12

    def __post_init__(self) -> None:
        for k, v in asdict(self).items():
            if v <= 0:
                raise ValueError(f"ModelConfig.{k}={v} must be positive")
        if self.D % self.heads:
            raise ValueError(f"D={self.D} not divisible by heads={self.heads}")


class Attention(nn.Module):
    def __init__(self, D: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(D, D)
        self.k = nn.Linear(D, D)
        self.v = nn.Linear(D, D)
        self.o = nn.Linear(D, D)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        B, T, D = x.shape
        h = self.heads

        def split(t):
            return t.view(B, -1, h, D // h).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(ctx)), split(self.v(ctx))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(D // h)
        y = att.softmax(dim=-1) @ v
        return self.o(y.transpose(1, 2).reshape(B, T, D))


class DecoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        D = cfg.D
        self.ln_self = nn.LayerNorm(D)
        self.self_attn = Attention(D, cfg.heads)
        self.ln_cross = nn.LayerNorm(D)
        self.ln_feat = nn.LayerNorm(D)
        self.cross_attn = Attention(D, cfg.heads)
        self.ln_ff = nn.LayerNorm(D)
        self.ff1 = nn.Linear(D, cfg.d_ff)
        self.ff2 = nn.Linear(cfg.d_ff, D)

    def forward(self, x: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
        h = self.ln_self(x)
        x = x + self.self_attn(h, h)  # no causal mask
        x = x + self.cross_attn(self.ln_cross(x), self.ln_feat(feats))
        return x + self.ff2(F.gelu(self.ff1(self.ln_ff(x))))


class Prediction(NamedTuple):
    logits: torch.Tensor
    probs: torch.Tensor
    conf: torch.Tensor
    argmax: torch.Tensor


class MaskDiffusionDecoder(nn.Module):
    """``forward(feats, ids) -> logits`` with shapes ``(B,S,D), (B,L) -> (B,L,V)``."""

    def __init__(self, cfg: ModelConfig, check_finite: bool = True):
        super().__init__()
        self.cfg = cfg
        self.check_finite = check_finite
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.D)
        self.pos_emb = nn.Parameter(torch.zeros(cfg.L, cfg.D))
        self.feat_pos = nn.Parameter(torch.zeros(cfg.S, cfg.D))
        self.blocks = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.N))
        self.ln_out = nn.LayerNorm(cfg.D)
        self.classifier = nn.Linear(cfg.D, cfg.vocab_size)

    def _check(self, t: torch.Tensor, where: str) -> None:
        if self.check_finite and not torch.isfinite(t).all():
            raise NonFiniteError(f"non-finite activations after {where}")

    def forward(self, feats: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
        x = self.tok_emb(ids) + self.pos_emb
        f = feats + self.feat_pos
        self._check(x, "embedding")
        for n, blk in enumerate(self.blocks):
            x = blk(x, f)
            self._check(x, f"block {n}")
        logits = self.classifier(self.ln_out(x))
        self._check(logits, "classifier")
        return logits

    @torch.no_grad()
    def predict(self, feats, ids) -> Prediction:
        feats = torch.as_tensor(np.asarray(feats), dtype=self.dtype)
        ids = torch.as_tensor(np.asarray(ids), dtype=torch.long)
        logits = self(feats, ids)
        probs = logits.softmax(-1)
        conf, arg = probs.max(-1)
        return Prediction(logits, probs, conf, arg)

    @property
    def dtype(self) -> torch.dtype:
        return self.pos_emb.dtype


def init_params(cfg: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> MaskDiffusionDecoder:
    """Build a decoder with seeded scaled-normal weights (std ``1/sqrt(fan_in)``).

    The classifier uses std ``1/D`` so initial rows are close to uniform.
    """
    g = torch.Generator().manual_seed(int(seed))
    model = MaskDiffusionDecoder(cfg)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif ".ln_" in name or name.startswith("ln_"):
                p.fill_(1.0)
            elif name.startswith("classifier"):
                p.normal_(0.0, 1.0 / cfg.D, generator=g)
            elif p.dim() == 2 and "emb" not in name and "pos" not in name:
                p.normal_(0.0, 1.0 / math.sqrt(p.shape[1]), generator=g)
            else:
                p.normal_(0.0, 1.0 / math.sqrt(cfg.D), generator=g)
    return model.to(dtype)


def named_tensors(model: nn.Module) -> Dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def load_tensors(model: nn.Module, tensors: Dict[str, np.ndarray]) -> nn.Module:
    ref = model.state_dict()
    missing = set(ref) - set(tensors)
    if missing:
        raise ValueError(f"missing tensors: {sorted(missing)}")
    model.load_state_dict({k: torch.as_tensor(tensors[k], dtype=ref[k].dtype) for k in ref})
    return model


def gradients(model: nn.Module, loss: torch.Tensor) -> Dict[str, torch.Tensor]:
    """Reverse-mode gradient of a scalar loss for every named parameter."""
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {n: (torch.zeros_like(p) if g is None else g) for n, p, g in zip(names, params, grads)}
