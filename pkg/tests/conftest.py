import numpy as np
import pytest

from robad import ModelConfig, gen_synthetic, init_params, preprocess


def central_diff(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar f at ndarray x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return np.max(np.abs(a - b) / denom)


@pytest.fixture(scope="session")
def tiny_setup():
    """Tiny-config corpus, vocab, params for model-level tests."""
    users = gen_synthetic(24, 0.9, seed=11)
    seqs, vocab = preprocess(users, d=4, window=3)
    cfg = ModelConfig(
        vocab_size=vocab.size, tokens_per_post=4, window=3, emb_dim=8, heads=2
    )
    params = init_params(cfg, seed=5)
    return cfg, params, seqs, vocab
