"""scikit-learn style wrapper: ``fit(grids, words)`` / ``predict(grids)``."""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_consistent_length, check_grids, check_texts
from .checkpoint import Checkpoint
from .evaluation import decode_all, word_accuracy
from .inference import make_policy, run, trace_records
from .model import ModelConfig, init_params, load_tensors, named_tensors
from .noising import ALL_STRATEGIES
from .training import TrainConfig, train_loop
from .vocab import DEFAULT_CHARSET, build_vocab, encode_batch

log = logging.getLogger(__name__)


class MaskDiffusionRecognizer(BaseEstimator):
    """Mask-diffusion text decoder over per-position feature grids.

    Parameters
    ----------
    charset : str, default=lowercase a-z
        Output characters; [MASK] and [PAD] are appended internally.
    max_len : int, default=12
        Fixed sequence length ``L`` (also the number of feature positions).
    dim, n_layers, n_heads, d_ff : int
        Decoder width, depth, attention heads and feed-forward width.
    lr, weight_decay, warmup_steps, total_steps, batch_size
        AdamW / one-cycle schedule settings.
    branch_correction_prob : float, default=0.5
        Probability that a training example goes to the token-replacement
        correction objective (only when ``trn_enabled``).
    trn_enabled : bool, default=True
        Train with token-replacement corruption.
    mask_strategies : tuple of str or None
        Training mask strategies; ``None`` means all seven.
    policy : {"pd", "ar", "re", "lc", "blc"}, default="blc"
        Remask policy used by :meth:`predict`.
    steps : int or None, default=3
        Denoising steps ``K`` (ignored for PD and AR, which fix it).
    random_state : int, default=0
        Seeds parameter init and batch sampling.

    Attributes
    ----------
    model_ : MaskDiffusionDecoder
    vocab_ : Vocab
    n_steps_trained_ : int
    """

    def __init__(self, charset: str = DEFAULT_CHARSET, max_len: int = 12, dim: int = 64,
                 n_layers: int = 2, n_heads: int = 4, d_ff: int = 256, lr: float = 5e-4,
                 weight_decay: float = 0.05, warmup_steps: int = 250, total_steps: int = 5000,
                 batch_size: int = 64, branch_correction_prob: float = 0.5,
                 trn_enabled: bool = True, mask_strategies: Optional[tuple] = None,
                 policy: str = "blc", steps: Optional[int] = 3, random_state: int = 0):
        self.charset = charset
        self.max_len = max_len
        self.dim = dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.lr = lr
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.branch_correction_prob = branch_correction_prob
        self.trn_enabled = trn_enabled
        self.mask_strategies = mask_strategies
        self.policy = policy
        self.steps = steps
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg, **overrides) -> "MaskDiffusionRecognizer":
        """Build from an :class:`~maskdiff.config.ExperimentConfig`."""
        m, t = cfg.model, cfg.train
        params = dict(
            charset=cfg.data.charset, max_len=m.L, dim=m.D, n_layers=m.N, n_heads=m.heads,
            d_ff=m.d_ff, lr=t.lr, weight_decay=t.weight_decay, warmup_steps=t.warmup_steps,
            total_steps=t.total_steps, batch_size=t.batch_size,
            branch_correction_prob=t.branch_correction_prob, trn_enabled=t.trn_enabled,
            mask_strategies=tuple(t.mask_strategy_set), policy=cfg.infer.policy,
            steps=cfg.infer.K, random_state=cfg.data.seed,
        )
        params.update(overrides)
        return cls(**params)

    def _model_config(self) -> ModelConfig:
        return ModelConfig(L=self.max_len, vocab_size=len(self.charset) + 2, D=self.dim,
                           N=self.n_layers, heads=self.n_heads, d_ff=self.d_ff, S=self.max_len)

    def _train_config(self) -> TrainConfig:
        strategies = self.mask_strategies or tuple(s.value for s in ALL_STRATEGIES)
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay, warmup_steps=self.warmup_steps,
                           total_steps=self.total_steps, batch_size=self.batch_size,
                           branch_correction_prob=self.branch_correction_prob,
                           trn_enabled=self.trn_enabled, mask_strategy_set=tuple(strategies),
                           K=self.steps or 3)

    def fit(self, X, y, metrics=None, on_checkpoint=None) -> "MaskDiffusionRecognizer":
        self.vocab_ = build_vocab(self.charset)
        X = check_grids(X, self.max_len, self.dim)
        texts = check_texts(y, self.max_len, self.vocab_)
        check_consistent_length(X, texts)
        if not texts:
            raise ValueError("cannot fit on an empty training set")
        tcfg = self._train_config()
        self.model_ = init_params(self._model_config(), self.random_state)
        train_loop(self.model_, tcfg, encode_batch(texts, self.max_len, self.vocab_), X,
                   self.random_state, self.vocab_, metrics=metrics, on_checkpoint=on_checkpoint)
        self.n_steps_trained_ = tcfg.total_steps
        return self

    def _policy(self, policy: Optional[str], steps: Optional[int]):
        policy = policy or self.policy
        steps = self.steps if steps is None and policy == self.policy else steps
        if policy in ("pd", "ar"):
            steps = None
        return make_policy(policy, self.max_len, steps)

    def predict_ids(self, X, policy: Optional[str] = None, steps: Optional[int] = None) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_grids(X, self.max_len, self.dim)
        out, _ = run(self.model_, X, self._policy(policy, steps), self.vocab_)
        return out

    def predict(self, X, policy: Optional[str] = None, steps: Optional[int] = None) -> np.ndarray:
        """Decoded strings, one per grid (object array)."""
        return np.array(decode_all(self.predict_ids(X, policy, steps), self.vocab_), dtype=object)

    def trace(self, grid, policy: Optional[str] = None, steps: Optional[int] = None) -> list[dict]:
        """Per-step records for one grid."""
        check_is_fitted(self, "model_")
        X = check_grids(grid, self.max_len, self.dim)
        _, tr = run(self.model_, X, self._policy(policy, steps), self.vocab_)
        return trace_records(tr, self.vocab_)

    def score(self, X, y, policy: Optional[str] = None, steps: Optional[int] = None) -> float:
        """Word accuracy."""
        return word_accuracy(list(self.predict(X, policy, steps)), list(y))

    def to_checkpoint(self, config: Optional[dict] = None) -> Checkpoint:
        check_is_fitted(self, "model_")
        header = {"config": config or {}, "estimator": self.get_params(),
                  "step": getattr(self, "n_steps_trained_", 0)}
        header["estimator"]["mask_strategies"] = list(self.mask_strategies or [])
        return Checkpoint(header, named_tensors(self.model_))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "MaskDiffusionRecognizer":
        params = dict(ckpt.header["estimator"])
        params["mask_strategies"] = tuple(params["mask_strategies"]) or None
        est = cls(**params)
        est.vocab_ = build_vocab(est.charset)
        est.model_ = load_tensors(init_params(est._model_config(), 0), ckpt.tensors)
        est.model_.eval()
        est.n_steps_trained_ = ckpt.step
        return est
