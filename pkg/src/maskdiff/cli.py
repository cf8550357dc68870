"""Command-line entry point: ``maskdiff <subcommand> ...``.

Machine-readable output (JSON lines) goes to stdout; diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, from_dict, load_config
from .estimator import MaskDiffusionRecognizer
from .evaluation import evaluate_policy, occluded_in_text
from .experiment import ablate, build_dataset, load_dataset, save_dataset, train
from .gradcheck import gradcheck
from .inference import PolicyKind
from .model import ModelConfig
from .synthetic import make_codebook, render_features
from .vocab import encode

log = logging.getLogger("maskdiff")

POLICIES = [p.value for p in PolicyKind]


def _emit(rec: dict) -> None:
    sys.stdout.write(json.dumps(rec) + "\n")
    sys.stdout.flush()


def _config(path: Optional[str]) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig().validate()


def cmd_gen_data(args) -> int:
    cfg = _config(args.config)
    ds = build_dataset(cfg, args.seed)
    path = save_dataset(ds, cfg, args.out)
    _emit({"dataset": str(path), "n_train": len(ds.train), "n_eval": len(ds.eval), "seed": ds.seed})
    return 0


def cmd_train(args) -> int:
    cfg = _config(args.config)
    seed = cfg.data.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(args.data) if args.data else build_dataset(cfg, seed)
    cfg_dict = cfg.to_dict()

    def snapshot(model, step: int) -> None:
        est_tmp = MaskDiffusionRecognizer.from_config(cfg, random_state=seed)
        est_tmp.vocab_, est_tmp.model_, est_tmp.n_steps_trained_ = cfg.vocab(), model, step
        save_checkpoint(out / f"ckpt_{step:06d}.md4s", est_tmp.to_checkpoint(cfg_dict))

    with open(out / "metrics.jsonl", "w") as fh:
        est = train(cfg, ds, seed, metrics=lambda r: fh.write(json.dumps(r) + "\n"),
                    on_checkpoint=snapshot)
    path = out / "final.md4s"
    save_checkpoint(path, est.to_checkpoint(cfg_dict))
    _emit({"checkpoint": str(path), "steps": est.n_steps_trained_, "seed": seed,
           "config_hash": cfg.hash()})
    return 0


def cmd_eval(args) -> int:
    est = MaskDiffusionRecognizer.from_checkpoint(load_checkpoint(args.ckpt))
    ds = load_dataset(args.data)
    split = ds.eval if ds.eval else ds.train
    texts, X, occ, _ = ds.arrays("eval" if ds.eval else "train")
    kind = PolicyKind(args.policy)
    K = None if kind in (PolicyKind.PD, PolicyKind.AR) else args.steps
    r = evaluate_policy(est.model_, X, texts, occluded_in_text(texts, occ), est.vocab_,
                        args.policy, K, timing_samples=args.timing_samples)
    _emit({"policy": r.policy, "K": r.K, "n": len(split), "word_accuracy": r.word_accuracy,
           "occluded_word_accuracy": r.occluded_accuracy,
           "forwards_per_sample": r.forwards_per_sample, "median_ms": r.median_ms})
    return 0


def cmd_trace(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    est = MaskDiffusionRecognizer.from_checkpoint(ckpt)
    cfg = from_dict(ckpt.config) if ckpt.config else ExperimentConfig()
    Y = encode(args.word, est.max_len, est.vocab_)
    if args.data:
        book = load_dataset(args.data).codebook.astype(np.float64)
    else:
        book = make_codebook(est.vocab_, est.dim, cfg.data.seed)
    grid = render_features(Y, cfg.data.corruption, np.random.default_rng(args.seed), book, est.vocab_)
    kind = PolicyKind(args.policy)
    K = None if kind in (PolicyKind.PD, PolicyKind.AR) else args.steps
    for rec in est.trace(grid.values, args.policy, K):
        _emit(rec)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args.config)
    seeds = args.seeds if args.seeds else [cfg.data.seed]
    ablate(cfg, args.out, seeds=seeds, emit=_emit)
    return 0


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg = _config(args.config)
        mcfg = cfg.model_config()
    else:
        mcfg = ModelConfig(L=4, vocab_size=6, D=8, N=1, heads=2, d_ff=16, S=4)
    res = gradcheck(mcfg, n_coords=args.coords)
    _emit({"max_rel_error": res.max_rel_error, "n_coords": res.n_coords, "worst": res.worst,
           "passed": res.passed})
    return 0 if res.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maskdiff", description="Mask-diffusion text decoding on synthetic feature grids.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset cache")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a decoder and write checkpoints + metrics.jsonl")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--data", help="dataset cache from gen-data (default: regenerate)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="word accuracy of a checkpoint on a dataset cache")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--policy", choices=POLICIES, default="blc")
    e.add_argument("--steps", type=int, default=3)
    e.add_argument("--data", required=True)
    e.add_argument("--timing-samples", type=int, default=50)
    e.set_defaults(func=cmd_eval)

    tr = sub.add_parser("trace", help="per-step denoising records for one word")
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--word", required=True)
    tr.add_argument("--policy", choices=POLICIES, default="blc")
    tr.add_argument("--steps", type=int, default=3)
    tr.add_argument("--seed", type=int, default=0, help="rendering noise seed")
    tr.add_argument("--data", help="dataset cache whose codebook to use")
    tr.set_defaults(func=cmd_trace)

    a = sub.add_parser("ablate", help="{R, R+All} x {TRN off, on} grid and K = 1..8 sweep")
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int, nargs="*")
    a.set_defaults(func=cmd_ablate)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check (float64)")
    gc.add_argument("--config")
    gc.add_argument("--coords", type=int, default=200)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
