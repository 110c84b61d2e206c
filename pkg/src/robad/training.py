"""Adversary-aware training loop, metrics, robustness eval, ablations, sweeps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as L
from . import model as M
from .attacks import AttackSpec, attack_user
from .data import Vocab, kfold_split, preprocess
from .optim import AdamState, adam_step
from .tensor import ContractError


@dataclass
class TrainConfig:
    model: M.ModelConfig
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    w_contrastive: float = 0.1
    temperature: float = 1.0
    train_attack: AttackSpec = field(default_factory=lambda: AttackSpec("copy_append"))
    regenerate_attacks_each_epoch: bool = True
    seed: int = 0
    early_stop_patience: int = 5

    def __post_init__(self):
        if not 0.0 <= self.w_contrastive <= 1.0:
            raise M.ConfigError(f"w_contrastive must be in [0, 1], got {self.w_contrastive}")
        if self.adversary_aware and self.batch_size < 2:
            raise M.ConfigError("batch_size must be >= 2 for adversary-aware training")
        if self.temperature <= 0:
            raise M.ConfigError("temperature must be positive")

    @property
    def adversary_aware(self):
        return self.model.variant not in ("no_adversary_aware", "baseline_meanpool")


@dataclass
class MetricsReport:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    f1_after_attack: dict = field(default_factory=dict)
    relative_drop_pct: dict = field(default_factory=dict)
    per_fold: list = field(default_factory=list)

    def to_dict(self):
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "f1_after_attack": dict(self.f1_after_attack),
            "relative_drop_pct": dict(self.relative_drop_pct),
            "per_fold": list(self.per_fold),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        cols = ["precision", "recall", "f1"]
        vals = [self.precision, self.recall, self.f1]
        for kind in sorted(self.f1_after_attack):
            cols += [f"f1_after_{kind}", f"drop_pct_{kind}"]
            vals += [self.f1_after_attack[kind], self.relative_drop_pct[kind]]
        return ",".join(cols) + "\n" + ",".join(f"{v:.6f}" for v in vals) + "\n"


def prf1(labels, preds):
    """Positive-class (bad actor) precision, recall, F1."""
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def relative_drop(f1_before, f1_after):
    """Percentage F1 drop caused by an attack; 0 when the pre-attack F1 is 0."""
    if f1_before <= 0.0:
        return 0.0
    return 100.0 * (f1_before - f1_after) / f1_before


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    # a trailing singleton breaks InfoNCE; merge it into the previous batch
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _predict(params, config, users, batch_size=64):
    preds = []
    for i in range(0, len(users), batch_size):
        chunk = users[i : i + batch_size]
        _, probs, _ = M.forward_batch(params, config, chunk)
        preds.extend(M.predict_label(probs).tolist())
    return np.asarray(preds, dtype=np.int64)


def evaluate(params, config, users):
    """Pre-attack classification metrics on a user set."""
    if not users:
        raise ContractError("evaluate: empty user set")
    labels = np.asarray([u.label for u in users])
    preds = _predict(params, config, users)
    p, r, f1 = prf1(labels, preds)
    return MetricsReport(precision=p, recall=r, f1=f1)


def robustness_eval(params, config, users, attacks, report=None, corpus=None):
    """Post-attack F1 and relative drop per attack kind.

    `report` supplies (or is created with) the pre-attack metrics needed
    for the drop. `corpus` is the pool attacks draw donor posts from
    (defaults to the evaluation users themselves).
    """
    if report is None:
        report = evaluate(params, config, users)
    corpus = corpus if corpus is not None else users
    labels = np.asarray([u.label for u in users])
    for spec in attacks:
        attacked = [attack_user(spec, u, corpus, window=config.window) for u in users]
        preds = _predict(params, config, attacked)
        _, _, f1_after = prf1(labels, preds)
        report.f1_after_attack[spec.kind] = f1_after
        report.relative_drop_pct[spec.kind] = relative_drop(report.f1, f1_after)
    return report


def _clone_params(params):
    return {k: M.Tensor(p.data.copy(), requires_grad=True) for k, p in params.items()}


def _contrastive_term(z, z_a, temperature):
    """InfoNCE restricted to pairs whose projections are both nonzero.

    A dead relu can zero a projection outright (its cosine gradient is
    undefined and it carries no direction), so such pairs are excluded;
    returns None if fewer than two pairs survive.
    """
    alive = (np.abs(z.data).sum(axis=1) > 0) & (np.abs(z_a.data).sum(axis=1) > 0)
    if alive.all():
        return L.info_nce(z, z_a, temperature=temperature)
    idx = np.flatnonzero(alive)
    if idx.size < 2:
        return None
    sel = np.eye(z.shape[0])[idx]
    return L.info_nce(
        M.Tensor(sel) @ z, M.Tensor(sel) @ z_a, temperature=temperature
    )


def train(config, train_users, val_users, params=None, log=None):
    """Run the adversary-aware training loop.

    Per batch: forward the original sequences and (unless the variant
    drops the adversary-aware module) their attacked counterparts, combine
    the clean/attacked cross-entropies with the InfoNCE term, and take one
    Adam step. Returns (params of the best validation-F1 epoch, log):
    log is a list of per-step dicts.
    """
    if {u.label for u in train_users} != {0, 1}:
        raise ContractError("train: both labels must be present in the training set")
    cfg = config.model
    if params is None:
        params = M.init_params(cfg, seed=config.seed)
    log = [] if log is None else log
    state = AdamState(params)
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng(config.seed + 1) if cfg.dropout > 0 else None
    attacked_cache = None
    best = (_clone_params(params), -1.0)
    patience_left = config.early_stop_patience
    for epoch in range(config.epochs):
        if config.adversary_aware and (
            attacked_cache is None or config.regenerate_attacks_each_epoch
        ):
            spec = replace(config.train_attack, seed=config.train_attack.seed + (
                epoch if config.regenerate_attacks_each_epoch else 0))
            attacked_cache = [
                attack_user(spec, u, train_users, window=cfg.window)
                for u in train_users
            ]
        for step, idx in enumerate(_batches(len(train_users), config.batch_size, rng)):
            batch = [train_users[i] for i in idx]
            labels = [u.label for u in batch]
            _, probs, z = M.forward_batch(params, cfg, batch, rng=drop_rng)
            l_ce = L.cross_entropy(probs, labels)
            if config.adversary_aware:
                atk = [attacked_cache[i] for i in idx]
                _, probs_a, z_a = M.forward_batch(params, cfg, atk, rng=drop_rng)
                l_ce_attack = L.cross_entropy(probs_a, labels)
                l_infonce = _contrastive_term(z, z_a, config.temperature)
                total = L.total_loss(
                    l_ce + l_ce_attack,
                    l_infonce if l_infonce is not None else 0.0,
                    config.w_contrastive,
                )
                bundle = LossStep(
                    epoch, step, l_ce.item(), l_ce_attack.item(),
                    l_infonce.item() if l_infonce is not None else 0.0,
                    config.w_contrastive,
                )
            else:
                total = l_ce
                bundle = LossStep(epoch, step, l_ce.item(), 0.0, 0.0, 0.0)
            M.zero_grads(params)
            total.backward()
            adam_step(params, M.collect_grads(params), state, lr=config.lr)
            log.append(bundle.as_dict())
        val_f1 = evaluate(params, cfg, val_users).f1 if val_users else float(epoch)
        if val_f1 > best[1]:
            best = (_clone_params(params), val_f1)
            patience_left = config.early_stop_patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break
    return (best[0] if best[1] >= 0 else params), log


@dataclass
class LossStep:
    epoch: int
    step: int
    l_ce: float
    l_ce_attack: float
    l_infonce: float
    w_contrastive: float

    def as_dict(self):
        b = L.LossBundle(self.l_ce, self.l_ce_attack, self.l_infonce, self.w_contrastive)
        return {
            "epoch": self.epoch,
            "step": self.step,
            "l_ce": b.l_ce,
            "l_ce_attack": b.l_ce_attack,
            "l_clf": b.l_clf,
            "l_infonce": b.l_infonce,
            "l_total": b.l_total,
        }


def split_validation(users, frac=0.1, seed=0):
    """Stratified train/validation split of a fold's training users."""
    rng = np.random.default_rng(seed)
    train, val = [], []
    for label in (0, 1):
        group = [u for u in users if u.label == label]
        order = rng.permutation(len(group))
        n_val = max(1, int(round(frac * len(group))))
        chosen = set(order[:n_val].tolist())
        for i, g in enumerate(group):
            (val if i in chosen else train).append(g)
    return train, val


def run_fold(config, raw_train, raw_test, attacks=(), min_freq=2):
    """Preprocess one fold (vocab from the training side only), train, evaluate."""
    cfg = config.model
    train_seqs, vocab = preprocess(
        raw_train, min_freq=min_freq, d=cfg.tokens_per_post, window=cfg.window
    )
    test_seqs, _ = preprocess(
        raw_test, d=cfg.tokens_per_post, window=cfg.window, vocab=vocab
    )
    cfg = replace(cfg, vocab_size=vocab.size)
    config = replace(config, model=cfg)
    tr, val = split_validation(train_seqs, seed=config.seed)
    params, log = train(config, tr, val)
    report = evaluate(params, cfg, test_seqs)
    if attacks:
        report = robustness_eval(params, cfg, test_seqs, attacks, report=report)
    return params, vocab, report, log, config


def run_cv(config, raw_users, attacks=(), k=5, min_freq=2):
    """k-fold cross-validation; returns (fold results, aggregated report)."""
    results = []
    for fold, (raw_train, raw_test) in enumerate(kfold_split(raw_users, k=k, seed=config.seed)):
        fold_config = replace(config, seed=config.seed + fold)
        results.append(run_fold(fold_config, raw_train, raw_test, attacks=attacks,
                                min_freq=min_freq))
    agg = MetricsReport(
        precision=float(np.mean([r[2].precision for r in results])),
        recall=float(np.mean([r[2].recall for r in results])),
        f1=float(np.mean([r[2].f1 for r in results])),
        per_fold=[r[2].to_dict() for r in results],
    )
    for spec in attacks:
        after = float(np.mean([r[2].f1_after_attack[spec.kind] for r in results]))
        agg.f1_after_attack[spec.kind] = after
        agg.relative_drop_pct[spec.kind] = relative_drop(agg.f1, after)
    return results, agg


ABLATION_VARIANTS = ("full", "no_local_global", "no_adversary_aware")


def ablate(config, raw_users, attacks=(), k=5):
    """Train and evaluate the model variants under identical folds and seeds."""
    table = {}
    for variant in ABLATION_VARIANTS:
        vcfg = replace(config, model=replace(config.model, variant=variant))
        _, agg = run_cv(vcfg, raw_users, attacks=attacks, k=k)
        table[variant] = agg
    return table


def sweep(base_config, grid, raw_users, k=5):
    """Cross-validated mean F1 per grid point.

    grid maps a hyperparameter name (TrainConfig or ModelConfig field) to
    a list of values; the sweep is over single-parameter settings.
    """
    if not grid or not any(len(v) for v in grid.values()):
        raise ContractError("sweep: empty grid")
    model_fields = set(M.ModelConfig.__dataclass_fields__)
    rows = []
    for key, values in grid.items():
        for value in values:
            if key in model_fields:
                cfg = replace(base_config, model=replace(base_config.model, **{key: value}))
            elif key in TrainConfig.__dataclass_fields__:
                cfg = replace(base_config, **{key: value})
            else:
                raise M.ConfigError(f"unknown sweep parameter {key!r}")
            _, agg = run_cv(cfg, raw_users, k=k)
            rows.append({"param": key, "value": value, "mean_f1": agg.f1})
    return rows
