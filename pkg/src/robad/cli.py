"""Command-line entry point.

Commands: gen-synth, train, eval, attack-eval, ablate, sweep. Experiment
settings live in a flat JSON config file; command-line flags override
file keys. Exit codes: 0 ok, 2 config error, 3 data error, 4 missing
artifact.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import model as M
from . import training as TE
from .attacks import ATTACK_KINDS, AttackSpec
from .checkpoint import CheckpointError, CheckpointMismatch, load_checkpoint, save_checkpoint
from .data import CorpusError, Vocab, gen_synthetic, kfold_split, load_corpus, preprocess, save_corpus
from .tensor import ContractError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ARTIFACT = 4

ATTACK_ALIASES = {"copy": "copy_append", "foreign": "foreign_post", "ngram": "ngram_gen"}

MODEL_KEYS = {
    "tokens_per_post": int,
    "window": int,
    "emb_dim": int,
    "heads": int,
    "enc_layers": int,
    "dec_layers": int,
    "ffn_mult": int,
    "dropout": float,
    "variant": str,
}
TRAIN_KEYS = {
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "w_contrastive": float,
    "temperature": float,
    "seed": int,
    "early_stop_patience": int,
    "regenerate_attacks_each_epoch": bool,
    "train_attack": str,
    "train_attack_seed": int,
    "ngram_order": int,
}
EXTRA_KEYS = {"folds": int, "min_freq": int, "attacks": list}


class CliError(SystemExit):
    def __init__(self, code, message):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(code)


def load_run_config(path, overrides=None):
    """Parse and validate the flat JSON config; unknown keys are rejected."""
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise CliError(EXIT_CONFIG, f"cannot read config: {e}")
    except json.JSONDecodeError as e:
        raise CliError(EXIT_CONFIG, f"config is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise CliError(EXIT_CONFIG, "config must be a JSON object")
    raw.update(overrides or {})
    allowed = {**MODEL_KEYS, **TRAIN_KEYS, **EXTRA_KEYS}
    for key, value in raw.items():
        if key not in allowed:
            raise CliError(EXIT_CONFIG, f"unknown config key {key!r}")
        want = allowed[key]
        if want is bool:
            if not isinstance(value, bool):
                raise CliError(EXIT_CONFIG, f"config key {key!r} must be a boolean")
        elif want is list:
            if not isinstance(value, list):
                raise CliError(EXIT_CONFIG, f"config key {key!r} must be a list")
        elif want is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise CliError(EXIT_CONFIG, f"config key {key!r} must be an integer")
        elif want is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise CliError(EXIT_CONFIG, f"config key {key!r} must be a number")
        elif want is str and not isinstance(value, str):
            raise CliError(EXIT_CONFIG, f"config key {key!r} must be a string")
    try:
        model_cfg = M.ModelConfig(
            vocab_size=2,  # replaced per fold once the vocab is built
            **{k: raw[k] for k in MODEL_KEYS if k in raw},
        )
        attack = AttackSpec(
            kind=raw.get("train_attack", "copy_append"),
            seed=raw.get("train_attack_seed", raw.get("seed", 0)),
            ngram_order=raw.get("ngram_order", 2),
            target_len=raw.get("tokens_per_post", 30),
        )
        train_cfg = TE.TrainConfig(
            model=model_cfg,
            train_attack=attack,
            **{
                k: raw[k]
                for k in TRAIN_KEYS
                if k in raw and k not in ("train_attack", "train_attack_seed", "ngram_order")
            },
        )
    except (M.ConfigError, ContractError) as e:
        raise CliError(EXIT_CONFIG, str(e))
    attacks = []
    for kind in raw.get("attacks", []):
        kind = ATTACK_ALIASES.get(kind, kind)
        try:
            attacks.append(AttackSpec(kind=kind, seed=raw.get("seed", 0)))
        except ContractError as e:
            raise CliError(EXIT_CONFIG, str(e))
    extra = {"folds": raw.get("folds", 5), "min_freq": raw.get("min_freq", 2)}
    return train_cfg, attacks, extra


def _load_users(path):
    try:
        return load_corpus(path)
    except OSError as e:
        raise CliError(EXIT_DATA, f"cannot read corpus: {e}")
    except CorpusError as e:
        raise CliError(EXIT_DATA, str(e))


def _write(path, text):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def cmd_gen_synth(args):
    try:
        users = gen_synthetic(args.users, args.sep, seed=args.seed)
    except ContractError as e:
        raise CliError(EXIT_CONFIG, str(e))
    try:
        save_corpus(users, args.out)
    except OSError as e:
        raise CliError(EXIT_DATA, f"cannot write corpus: {e}")
    print(f"wrote {len(users)} users to {args.out}")
    return 0


def _log_lines(log):
    lines = []
    for rec in log:
        lines.append(
            f"epoch={rec['epoch']} step={rec['step']} l_ce={rec['l_ce']:.6f} "
            f"l_ce_attack={rec['l_ce_attack']:.6f} l_clf={rec['l_clf']:.6f} "
            f"l_infonce={rec['l_infonce']:.6f} l_total={rec['l_total']:.6f}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def cmd_train(args):
    config, attacks, extra = load_run_config(args.config)
    users = _load_users(args.data)
    os.makedirs(args.out, exist_ok=True)
    try:
        results, agg = TE.run_cv(
            config, users, attacks=attacks, k=extra["folds"], min_freq=extra["min_freq"]
        )
    except (ContractError, CorpusError) as e:
        raise CliError(EXIT_DATA, str(e))
    log_text = ""
    for fold, (params, vocab, report, log, fold_config) in enumerate(results):
        save_checkpoint(params, fold_config.model, os.path.join(args.out, f"fold{fold}.ckpt"))
        vocab.save(os.path.join(args.out, f"fold{fold}.vocab"))
        log_text += f"# fold {fold}\n" + _log_lines(log)
    _write(os.path.join(args.out, "metrics.json"), agg.to_json() + "\n")
    _write(os.path.join(args.out, "metrics.csv"), agg.to_csv())
    _write(os.path.join(args.out, "train_log.txt"), log_text)
    print(agg.to_json())
    return 0


def _fold_artifacts(config, extra, data_path, ckpt_dir):
    """Rebuild each fold's (params, test sequences, model config)."""
    users = _load_users(data_path)
    try:
        folds = kfold_split(users, k=extra["folds"], seed=config.seed)
    except ContractError as e:
        raise CliError(EXIT_DATA, str(e))
    out = []
    for fold, (raw_train, raw_test) in enumerate(folds):
        ckpt = os.path.join(ckpt_dir, f"fold{fold}.ckpt")
        vocab_path = os.path.join(ckpt_dir, f"fold{fold}.vocab")
        if not os.path.exists(ckpt) or not os.path.exists(vocab_path):
            raise CliError(EXIT_ARTIFACT, f"missing checkpoint artifacts for fold {fold} in {ckpt_dir}")
        try:
            vocab = Vocab.load(vocab_path)
        except (OSError, CorpusError) as e:
            raise CliError(EXIT_ARTIFACT, f"cannot load vocab: {e}")
        cfg = replace(config.model, vocab_size=vocab.size)
        try:
            params = load_checkpoint(ckpt, cfg)
        except (CheckpointError, CheckpointMismatch, OSError) as e:
            raise CliError(EXIT_ARTIFACT, f"cannot load checkpoint: {e}")
        test_seqs, _ = preprocess(
            raw_test, d=cfg.tokens_per_post, window=cfg.window, vocab=vocab
        )
        out.append((params, test_seqs, cfg))
    return out


def cmd_eval(args):
    config, _, extra = load_run_config(args.config)
    folds = _fold_artifacts(config, extra, args.data, args.ckpt)
    reports = [TE.evaluate(params, cfg, seqs) for params, seqs, cfg in folds]
    agg = TE.MetricsReport(
        precision=float(np.mean([r.precision for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        f1=float(np.mean([r.f1 for r in reports])),
        per_fold=[r.to_dict() for r in reports],
    )
    print(agg.to_json())
    return 0


def cmd_attack_eval(args):
    config, _, extra = load_run_config(args.config)
    kind = ATTACK_ALIASES.get(args.attack, args.attack)
    try:
        spec = AttackSpec(kind=kind, seed=args.seed)
    except ContractError as e:
        raise CliError(EXIT_CONFIG, str(e))
    folds = _fold_artifacts(config, extra, args.data, args.ckpt)
    reports = [
        TE.robustness_eval(params, cfg, seqs, [spec]) for params, seqs, cfg in folds
    ]
    pre = float(np.mean([r.f1 for r in reports]))
    post = float(np.mean([r.f1_after_attack[kind] for r in reports]))
    drop = TE.relative_drop(pre, post)
    agg = TE.MetricsReport(
        precision=float(np.mean([r.precision for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        f1=pre,
        f1_after_attack={kind: post},
        relative_drop_pct={kind: drop},
        per_fold=[r.to_dict() for r in reports],
    )
    print(agg.to_json())
    print(f"pre_f1={pre:.4f} post_f1={post:.4f} drop={drop:.3f}%")
    return 0


def cmd_ablate(args):
    config, attacks, extra = load_run_config(args.config)
    users = _load_users(args.data)
    try:
        table = TE.ablate(config, users, attacks=attacks, k=extra["folds"])
    except (ContractError, CorpusError) as e:
        raise CliError(EXIT_DATA, str(e))
    out = {variant: report.to_dict() for variant, report in table.items()}
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        _write(args.out, text + "\n")
    print(text)
    return 0


def cmd_sweep(args):
    config, _, extra = load_run_config(args.config)
    try:
        with open(args.grid, encoding="utf-8") as f:
            grid = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(EXIT_CONFIG, f"cannot read grid: {e}")
    if not isinstance(grid, dict) or not grid or not any(grid.values()):
        raise CliError(EXIT_CONFIG, "grid must be a nonempty JSON object of lists")
    users = _load_users(args.data)
    try:
        rows = TE.sweep(config, grid, users, k=extra["folds"])
    except M.ConfigError as e:
        raise CliError(EXIT_CONFIG, str(e))
    except (ContractError, CorpusError) as e:
        raise CliError(EXIT_DATA, str(e))
    print(json.dumps(rows, indent=2))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="robad", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic corpus file")
    g.add_argument("--out", required=True)
    g.add_argument("--users", type=int, required=True)
    g.add_argument("--sep", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="5-fold cross-validated training")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate saved fold checkpoints")
    e.add_argument("--config", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("attack-eval", help="robustness evaluation under one attack")
    a.add_argument("--config", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--ckpt", required=True)
    a.add_argument("--attack", required=True,
                   choices=sorted(set(ATTACK_ALIASES) | set(ATTACK_KINDS)))
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_attack_eval)

    b = sub.add_parser("ablate", help="train and compare model variants")
    b.add_argument("--config", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="hyperparameter sweep over a grid file")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--grid", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        return e.code


if __name__ == "__main__":
    sys.exit(main())
