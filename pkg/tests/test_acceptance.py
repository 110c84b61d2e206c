"""Acceptance suite: one printed pass/fail line per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see the summary lines.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from robad import (
    AttackSpec,
    ModelConfig,
    Tensor,
    TrainConfig,
    apply_attack,
    cross_entropy,
    encode_post,
    gen_synthetic,
    info_nce,
    init_params,
    kfold_split,
    load_corpus,
    preprocess,
    total_loss,
)
from robad import model as M
from robad.checkpoint import load_checkpoint, save_checkpoint
from robad.data import UserSequence, save_corpus
from robad.model import forward_batch
from robad.training import relative_drop, run_cv, run_fold


_CAPTURE = None


@pytest.fixture(autouse=True)
def _verdict_console(capfd):
    global _CAPTURE
    _CAPTURE = capfd
    yield
    _CAPTURE = None


def _verdict(name, ok, detail=""):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
    # Write past pytest's capture so the summary line always reaches the console.
    with _CAPTURE.disabled():
        print(line, flush=True)
    assert ok, f"{name} failed: {detail}"


def _tiny_users(n, cfg, seed):
    rng = np.random.default_rng(seed)
    users = []
    for u in range(n):
        n_posts = int(rng.integers(2, cfg.window + 1))
        tokens = rng.integers(2, cfg.vocab_size, size=(n_posts, cfg.tokens_per_post))
        mask = np.ones_like(tokens, dtype=bool)
        for i in range(n_posts):
            cut = int(rng.integers(2, cfg.tokens_per_post + 1))
            mask[i, cut:] = False
            tokens[i, cut:] = 0
        users.append(UserSequence(f"u{u}", u % 2, tokens.astype(np.int64), mask))
    return users


def test_criterion_1_gradient_suite():
    """Finite-difference check of the full training loss on the tiny config."""
    t0 = time.time()
    cfg = ModelConfig(vocab_size=20, tokens_per_post=4, window=3, emb_dim=8, heads=2)
    params = init_params(cfg, seed=3)
    users = _tiny_users(4, cfg, seed=9)
    attacked = [apply_attack(u, [2, 3, 4], window=cfg.window) for u in users]
    labels = [u.label for u in users]

    def loss_value():
        _, probs, z = forward_batch(params, cfg, users)
        _, probs_a, z_a = forward_batch(params, cfg, attacked)
        l_clf = 0.5 * (cross_entropy(probs, labels) + cross_entropy(probs_a, labels))
        return total_loss(l_clf, info_nce(z, z_a), 0.1)

    loss = loss_value()
    M.zero_grads(params)
    loss.backward()
    grads = M.collect_grads(params)

    rng = np.random.default_rng(17)
    names = sorted(grads)
    worst = 0.0
    checked = 0
    while checked < 60:
        name = names[rng.integers(len(names))]
        flat = params[name].data.reshape(-1)
        i = int(rng.integers(flat.size))
        orig, eps = flat[i], 1e-5
        flat[i] = orig + eps
        fp = loss_value().item()
        flat[i] = orig - eps
        fm = loss_value().item()
        flat[i] = orig
        fd = (fp - fm) / (2 * eps)
        an = grads[name].reshape(-1)[i]
        if abs(fd) + abs(an) < 1e-10:
            continue
        worst = max(worst, abs(fd - an) / (abs(fd) + abs(an)))
        checked += 1
    elapsed = time.time() - t0
    _verdict(
        "1 gradient suite",
        worst < 1e-3 and elapsed < 60.0,
        f"(max rel err {worst:.2e}, {elapsed:.1f}s)",
    )


def test_criterion_2_loss_oracles():
    eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
    same = Tensor([[1.0, 0.0], [1.0, 0.0]])
    ok = (
        abs(info_nce(eye, eye).item() - np.log(1.0 + 2.0 / np.e)) <= 1e-9
        and abs(info_nce(same, same).item() - np.log(3.0)) <= 1e-9
        and abs(cross_entropy(Tensor([[0.5, 0.5]]), [1]).item() - np.log(2.0)) <= 1e-12
        and total_loss(Tensor(0.7), Tensor(0.3), 0.0).item() == 0.7
        and total_loss(Tensor(0.7), Tensor(0.3), 1.0).item() == 0.3
    )
    _verdict("2 loss oracles", ok)


def test_criterion_3_relative_drop_arithmetic():
    d1 = relative_drop(0.708, 0.700)
    d2 = relative_drop(0.683, 0.661)
    ok = abs(d1 - 1.129) <= 1e-3 and abs(d2 - 3.221) <= 1e-3
    _verdict("3 relative-drop arithmetic", ok, f"({d1:.3f}%, {d2:.3f}%)")


def test_criterion_4_synthetic_classification():
    t0 = time.time()
    users = gen_synthetic(200, 0.9, seed=7)
    cfg = ModelConfig(vocab_size=2, tokens_per_post=30, window=20, emb_dim=32, heads=2)
    _, agg = run_cv(TrainConfig(model=cfg, epochs=30, seed=7), users, k=5)
    elapsed = time.time() - t0
    _verdict(
        "4 synthetic classification",
        agg.f1 >= 0.90 and elapsed <= 600.0,
        f"(5-fold mean F1 {agg.f1:.3f}, {elapsed:.0f}s)",
    )


@pytest.fixture(scope="module")
def variant_runs():
    """One held-out fold per seed, trained for each model variant."""
    results = {}
    for seed in range(5):
        users = gen_synthetic(120, 0.9, seed=200 + seed)
        raw_train, raw_test = kfold_split(users, k=3, seed=seed)[0]
        eval_attack = [AttackSpec("foreign_post", seed=seed)]
        for variant in ("full", "no_adversary_aware", "no_local_global"):
            cfg = ModelConfig(vocab_size=2, emb_dim=32, heads=2, variant=variant)
            tc = TrainConfig(
                model=cfg,
                epochs=15,
                seed=seed,
                train_attack=AttackSpec("foreign_post", seed=seed),
            )
            _, _, rep, _, _ = run_fold(tc, raw_train, raw_test, attacks=eval_attack)
            results.setdefault(variant, []).append(rep)
    return results


def test_criterion_5_robustness_ordering(variant_runs):
    full = variant_runs["full"]
    naive = variant_runs["no_adversary_aware"]
    drop_full = np.mean([r.relative_drop_pct["foreign_post"] for r in full])
    drop_naive = np.mean([r.relative_drop_pct["foreign_post"] for r in naive])
    wins = sum(
        f.f1_after_attack["foreign_post"] >= n.f1_after_attack["foreign_post"]
        for f, n in zip(full, naive)
    )
    _verdict(
        "5 robustness ordering",
        drop_full <= drop_naive and wins >= 4,
        f"(mean drop {drop_full:.2f}% vs {drop_naive:.2f}%, post-attack wins {wins}/5)",
    )


def test_criterion_6_ablation_ordering(variant_runs):
    means = {v: np.mean([r.f1 for r in runs]) for v, runs in variant_runs.items()}
    ok = all(means["full"] >= means[v] for v in ("no_adversary_aware", "no_local_global"))
    _verdict(
        "6 ablation ordering",
        ok,
        "(" + ", ".join(f"{v} {m:.3f}" for v, m in sorted(means.items())) + ")",
    )


def test_criterion_7_determinism_and_format(tmp_path):
    users = gen_synthetic(40, 0.9, seed=13)
    raw_train, raw_test = kfold_split(users, k=4, seed=13)[0]
    cfg = ModelConfig(vocab_size=2, tokens_per_post=8, window=6, emb_dim=8, heads=2)
    tc = TrainConfig(model=cfg, epochs=3, batch_size=8, seed=13)
    params1, _, rep1, _, tc1 = run_fold(tc, raw_train, raw_test)
    _, _, rep2, _, _ = run_fold(tc, raw_train, raw_test)
    same_metrics = rep1.to_json().encode() == rep2.to_json().encode()

    path = tmp_path / "model.ckpt"
    save_checkpoint(params1, tc1.model, str(path))
    loaded = load_checkpoint(str(path), tc1.model)
    worst = 0.0
    for name, t in params1.items():
        denom = np.maximum(np.abs(t.data), 1e-30)
        worst = max(worst, float(np.max(np.abs(loaded[name].data - t.data) / denom)))
    round_trip = worst <= 2.0 ** -20

    corpus_path = tmp_path / "corpus.jsonl"
    save_corpus(users, str(corpus_path))
    reloaded = load_corpus(str(corpus_path))
    corpus_ok = len(reloaded) == len(users) and all(
        a.user_id == b.user_id and a.label == b.label and a.posts == b.posts
        for a, b in zip(users, reloaded)
    )
    _verdict(
        "7 determinism and format",
        same_metrics and round_trip and corpus_ok,
        f"(ckpt max rel err {worst:.2e})",
    )


def test_criterion_8_masking_and_windows():
    cfg6 = ModelConfig(vocab_size=20, tokens_per_post=6, window=3, emb_dim=8, heads=2)
    params = init_params(cfg6, seed=5)
    ids4 = np.array([3, 4, 5, 0])
    mask4 = np.array([True, True, True, False])
    ids6 = np.array([3, 4, 5, 0, 0, 0])
    mask6 = np.array([True, True, True, False, False, False])
    e_short = encode_post(params, replace(cfg6, tokens_per_post=4), ids4, mask4)
    e_long = encode_post(params, cfg6, ids6, mask6)
    drift = float(np.abs(e_short.data - e_long.data).max())

    from robad.model import _rows, _transformer_block

    rng = np.random.default_rng(4)
    embs = Tensor(rng.normal(size=(2, 3, cfg6.emb_dim)))
    h = embs + _rows(params["post_pos"], 3)
    _, att = _transformer_block(params, "dec0", h, np.ones((2, 3), bool), cfg6.heads,
                                causal=True)
    upper = np.triu(np.ones((3, 3), dtype=bool), k=1)
    causal_ok = bool((att[..., upper] == 0.0).all())

    window_ok = True
    for n in (5, 19, 20):
        u = UserSequence(
            "w", 1,
            np.full((n, 2), 3, dtype=np.int64),
            np.ones((n, 2), dtype=bool),
        )
        out = apply_attack(u, [9, 9], window=20)
        expected = min(n + 1, 20)
        window_ok &= out.n_posts == expected
        window_ok &= list(out.tokens[-1][out.tok_mask[-1]]) == [9, 9]
        if n + 1 > 20:
            window_ok &= np.array_equal(out.tokens[0], u.tokens[1])
    _verdict(
        "8 masking and causality",
        drift <= 1e-10 and causal_ok and window_ok,
        f"(padding drift {drift:.1e})",
    )
