"""Dataset caching, the train/evaluate driver and the ablation grid."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, from_dict
from .estimator import MaskDiffusionRecognizer
from .evaluation import ALL_POLICIES, EvalReport, correction_probe, evaluate, evaluate_policy, occluded_in_text
from .synthetic import Dataset, FeatureGrid, Sample, gen_dataset, load_lexicon
from .training import MetricsSink

log = logging.getLogger(__name__)

DATASET_FILE = "dataset.md4s"


def build_dataset(cfg: ExperimentConfig, seed: Optional[int] = None) -> Dataset:
    seed = cfg.data.seed if seed is None else seed
    vocab = cfg.vocab()
    lex = load_lexicon(cfg.lexicon_path(), vocab, cfg.model.L)
    return gen_dataset(lex, cfg.data.n_train, cfg.data.corruption, seed, vocab,
                       cfg.model.L, cfg.model.D, n_eval=cfg.data.n_eval)


def dataset_checkpoint(ds: Dataset, cfg: ExperimentConfig) -> Checkpoint:
    tensors = {"codebook": ds.codebook.astype(np.float32)}
    texts = {}
    for split in ("train", "eval"):
        samples = getattr(ds, split)
        texts[split] = [s.text for s in samples]
        if samples:
            t, X, occ, sub = ds.arrays(split)
            tensors[f"{split}/grids"] = X
            tensors[f"{split}/occluded"] = occ.astype(np.float32)
            tensors[f"{split}/substituted"] = sub.astype(np.float32)
    header = {"kind": "dataset", "config": cfg.to_dict(), "seed": ds.seed, "texts": texts}
    return Checkpoint(header, tensors)


def dataset_from_checkpoint(ckpt: Checkpoint) -> Dataset:
    if ckpt.header.get("kind") != "dataset":
        raise ValueError("file is not a dataset cache")
    splits = {}
    for split in ("train", "eval"):
        texts = ckpt.header["texts"][split]
        if not texts:
            splits[split] = []
            continue
        X = ckpt.tensors[f"{split}/grids"]
        occ = ckpt.tensors[f"{split}/occluded"] > 0.5
        sub = ckpt.tensors[f"{split}/substituted"] > 0.5
        splits[split] = [Sample(t, FeatureGrid(X[i], occ[i], sub[i])) for i, t in enumerate(texts)]
    return Dataset(splits["train"], splits["eval"], ckpt.tensors["codebook"], int(ckpt.header["seed"]))


def save_dataset(ds: Dataset, cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / DATASET_FILE
    save_checkpoint(path, dataset_checkpoint(ds, cfg))
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.is_dir():
        path = path / DATASET_FILE
    return dataset_from_checkpoint(load_checkpoint(path))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seed: int
    estimator: MaskDiffusionRecognizer
    report: EvalReport
    probe: dict

    def to_dict(self) -> dict:
        return {"config_hash": self.config.hash(), "seed": self.seed,
                "report": self.report.to_dict(), "probe": self.probe}


def train(cfg: ExperimentConfig, ds: Dataset, seed: int, metrics: Optional[MetricsSink] = None,
          on_checkpoint=None) -> MaskDiffusionRecognizer:
    texts, X, _, _ = ds.arrays("train")
    est = MaskDiffusionRecognizer.from_config(cfg, random_state=seed)
    return est.fit(X, texts, metrics=metrics, on_checkpoint=on_checkpoint)


def evaluate_estimator(est: MaskDiffusionRecognizer, cfg: ExperimentConfig, ds: Dataset,
                       policies: Iterable[str] = ALL_POLICIES, seed: int = 0) -> tuple[EvalReport, dict]:
    texts, X, occ, _ = ds.arrays("eval")
    report = evaluate(est.model_, X, texts, occ, est.vocab_, policies, K=cfg.infer.K,
                      primary=cfg.infer.policy, timing_samples=cfg.infer.timing_samples)
    probe = correction_probe(est.model_, X, texts, est.vocab_, n_replace=2, seed=seed)
    return report, probe


def run_experiment(cfg: ExperimentConfig, seed: Optional[int] = None,
                   metrics: Optional[MetricsSink] = None,
                   policies: Iterable[str] = ALL_POLICIES) -> ExperimentResult:
    """Generate data, train, and evaluate under every policy. ``seed`` drives data and training."""
    seed = cfg.data.seed if seed is None else seed
    ds = build_dataset(cfg, seed)
    est = train(cfg, ds, seed, metrics)
    report, probe = evaluate_estimator(est, cfg, ds, policies, seed)
    return ExperimentResult(cfg, seed, est, report, probe)


def ablation_configs(cfg: ExperimentConfig) -> dict[str, ExperimentConfig]:
    """The {R, R+All} x {TRN off, on} grid."""
    all_set = [s for s in ("random", "full", "forward_ar", "backward_ar", "refinement",
                           "low_conf", "block_low_conf")]
    grid = {}
    for sname, sset in (("R", ["random"]), ("R+All", all_set)):
        for trn in (False, True):
            grid[f"{sname}|TRN={'on' if trn else 'off'}"] = cfg.replace(
                train={"mask_strategy_set": sset, "trn_enabled": trn})
    return grid


def k_sweep(est: MaskDiffusionRecognizer, ds: Dataset, Ks: Sequence[int] = range(1, 9),
            policies: Sequence[str] = ("lc", "blc")) -> list[dict]:
    """Accuracy of the confidence policies for each step count (K=1 is plain PD)."""
    texts, X, occ, _ = ds.arrays("eval")
    occ_rows = occluded_in_text(texts, occ)
    out = []
    for K in Ks:
        rec = {"K": int(K)}
        for p in policies:
            r = evaluate_policy(est.model_, X, texts, occ_rows, est.vocab_, p, int(K))
            rec[p] = {"word_accuracy": r.word_accuracy, "occluded_accuracy": r.occluded_accuracy}
        out.append(rec)
    return out


def ablate(cfg: ExperimentConfig, out_dir, seeds: Sequence[int] = (0,),
           emit: Optional[Callable[[dict], None]] = None) -> dict:
    """Run the 4-cell grid per seed plus a K = 1..8 sweep on the full-method cell."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results: dict = {"cells": {}, "k_sweep": {}}
    for seed in seeds:
        ds = build_dataset(cfg, seed)
        for name, ccfg in ablation_configs(cfg).items():
            with open(out / f"metrics_{name.replace('|', '_').replace('=', '')}_s{seed}.jsonl", "w") as fh:
                est = train(ccfg, ds, seed, metrics=lambda r, fh=fh: fh.write(json.dumps(r) + "\n"))
            report, probe = evaluate_estimator(est, ccfg, ds, seed=seed)
            rec = {"cell": name, "seed": seed, "config_hash": ccfg.hash(),
                   "report": report.to_dict(), "probe": probe}
            results["cells"].setdefault(name, []).append(rec)
            if emit:
                emit(rec)
            if name == "R+All|TRN=on":
                sweep = k_sweep(est, ds)
                results["k_sweep"][str(seed)] = sweep
                if emit:
                    for p in sweep:
                        emit({"k_sweep": p, "seed": seed})
    (out / "ablation.json").write_text(json.dumps(results, indent=2))
    return results
