"""Dual-transformer user classifier.

A per-post bidirectional encoder builds a local post embedding, a
causally masked decoder over the post embeddings builds the global
sequence embedding, and linear heads produce class probabilities and a
contrastive projection. Variants swap the attended path for mean pooling
or change only the training objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor

VARIANTS = ("full", "no_local_global", "no_adversary_aware", "baseline_meanpool")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    tokens_per_post: int = 30
    window: int = 20
    emb_dim: int = 128
    heads: int = 2
    enc_layers: int = 1
    dec_layers: int = 1
    ffn_mult: int = 4
    dropout: float = 0.0
    variant: str = "full"

    def __post_init__(self):
        counts = {
            "vocab_size": self.vocab_size,
            "tokens_per_post": self.tokens_per_post,
            "window": self.window,
            "emb_dim": self.emb_dim,
            "heads": self.heads,
            "enc_layers": self.enc_layers,
            "dec_layers": self.dec_layers,
            "ffn_mult": self.ffn_mult,
        }
        for name, val in counts.items():
            if not isinstance(val, int) or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val!r}")
        if self.emb_dim % self.heads != 0:
            raise ConfigError(
                f"emb_dim {self.emb_dim} must be divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def head_dim(self):
        return self.emb_dim // self.heads


def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def _block_param_specs(prefix, e, f):
    """(name, shape, kind) for one encoder/decoder block."""
    specs = []
    for proj in ("q", "k", "v", "o"):
        specs.append((f"{prefix}.w{proj}", (e, e), "weight"))
        specs.append((f"{prefix}.b{proj}", (e,), "bias"))
    specs.append((f"{prefix}.ffn_w1", (e, f), "weight"))
    specs.append((f"{prefix}.ffn_b1", (f,), "bias"))
    specs.append((f"{prefix}.ffn_w2", (f, e), "weight"))
    specs.append((f"{prefix}.ffn_b2", (e,), "bias"))
    specs.append((f"{prefix}.ln1_g", (e,), "gain"))
    specs.append((f"{prefix}.ln1_b", (e,), "bias"))
    specs.append((f"{prefix}.ln2_g", (e,), "gain"))
    specs.append((f"{prefix}.ln2_b", (e,), "bias"))
    return specs


def param_specs(config):
    """Ordered (name, shape, kind) for every learned matrix in the model."""
    e = config.emb_dim
    f = config.ffn_mult * e
    specs = [
        ("tok_emb", (config.vocab_size, e), "weight"),
        ("tok_pos", (config.tokens_per_post, e), "weight"),
        ("post_pos", (config.window, e), "weight"),
    ]
    for i in range(config.enc_layers):
        specs.extend(_block_param_specs(f"enc{i}", e, f))
    for i in range(config.dec_layers):
        specs.extend(_block_param_specs(f"dec{i}", e, f))
    specs.append(("clf_w", (e, 2), "weight"))
    specs.append(("proj_w1", (e, e), "weight"))
    specs.append(("proj_w2", (e, e), "weight"))
    return specs


def param_count(config):
    return sum(int(np.prod(shape)) for _, shape, _ in param_specs(config))


def init_params(config, seed=0):
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, kind in param_specs(config):
        if kind == "weight":
            fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0],) * 2
            data = _glorot(rng, fan_in, fan_out, shape)
        elif kind == "gain":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def zero_grads(params):
    for p in params.values():
        p.grad = None


def collect_grads(params):
    return {k: p.grad for k, p in params.items() if p.grad is not None}


def _multi_head_attention(params, prefix, x, keep_mask, heads, causal=False):
    """Self-attention. x: [..., L, E]; keep_mask: [..., L] bool over keys.

    Returns (output [..., L, E], attention weights ndarray).
    """
    L, E = x.shape[-2], x.shape[-1]
    hd = E // heads
    batch = x.shape[:-2]

    def split(t):
        t = T.reshape(t, batch + (L, heads, hd))
        axes = tuple(range(len(batch))) + (len(batch) + 1, len(batch), len(batch) + 2)
        return T.transpose(t, axes)  # [..., heads, L, hd]

    q = split(x @ params[f"{prefix}.wq"] + params[f"{prefix}.bq"])
    k = split(x @ params[f"{prefix}.wk"] + params[f"{prefix}.bk"])
    v = split(x @ params[f"{prefix}.wv"] + params[f"{prefix}.bv"])
    nb = len(batch)
    kt = T.transpose(k, tuple(range(nb + 1)) + (nb + 2, nb + 1))
    scores = (q @ kt) * (1.0 / np.sqrt(hd))  # [..., heads, L, L]
    mask = np.asarray(keep_mask, dtype=bool)
    mask = mask[..., None, None, :]  # broadcast over heads and query positions
    if causal:
        mask = mask & np.tril(np.ones((L, L), dtype=bool))
    att = T.masked_softmax(scores, np.broadcast_to(mask, scores.shape))
    out = att @ v  # [..., heads, L, hd]
    axes = tuple(range(nb)) + (nb + 1, nb, nb + 2)
    out = T.reshape(T.transpose(out, axes), batch + (L, E))
    out = out @ params[f"{prefix}.wo"] + params[f"{prefix}.bo"]
    return out, att.data


def _dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


def _transformer_block(params, prefix, x, keep_mask, heads, causal, dropout=0.0, rng=None):
    """Post-norm block: attention + residual + LN, FFN + residual + LN."""
    att_out, att = _multi_head_attention(params, prefix, x, keep_mask, heads, causal)
    x = T.layer_norm(x + _dropout(att_out, dropout, rng),
                     params[f"{prefix}.ln1_g"], params[f"{prefix}.ln1_b"])
    h = T.relu(x @ params[f"{prefix}.ffn_w1"] + params[f"{prefix}.ffn_b1"])
    h = h @ params[f"{prefix}.ffn_w2"] + params[f"{prefix}.ffn_b2"]
    x = T.layer_norm(x + _dropout(h, dropout, rng),
                     params[f"{prefix}.ln2_g"], params[f"{prefix}.ln2_b"])
    return x, att


def _masked_mean(x, mask):
    """Mean of x [..., L, E] over positions where mask [..., L] is True."""
    m = np.asarray(mask, dtype=np.float64)[..., None]
    total = T.sum_axis(x * m, axis=-2)
    count = m.sum(axis=-2)
    return total * (1.0 / count)


def _rows(t, n):
    """First n rows of a 2-D parameter, differentiable."""
    return T.embedding_rows(t, np.arange(n))


def encode_posts_batch(params, config, token_ids, token_mask, rng=None, collect_att=None):
    """Encode a batch of posts. token_ids/token_mask: [..., d] -> [..., E]."""
    d = token_ids.shape[-1]
    if not np.asarray(token_mask, dtype=bool).any(axis=-1).all():
        raise ContractError("encode_post: a post has no unmasked token")
    h = T.embedding_rows(params["tok_emb"], token_ids) + _rows(params["tok_pos"], d)
    if config.variant in ("no_local_global", "baseline_meanpool"):
        return _masked_mean(h, token_mask)
    for i in range(config.enc_layers):
        h, att = _transformer_block(
            params, f"enc{i}", h, token_mask, config.heads, causal=False,
            dropout=config.dropout, rng=rng,
        )
        if collect_att is not None:
            collect_att.append(att)
    return _masked_mean(h, token_mask)


def encode_post(params, config, token_ids, token_mask):
    """Local post embedding for a single post ([d] ids/mask -> [E])."""
    ids = np.asarray(token_ids, dtype=np.int64)[None, :]
    mask = np.asarray(token_mask, dtype=bool)[None, :]
    return T.reshape(encode_posts_batch(params, config, ids, mask), (-1,))


def encode_sequence_batch(params, config, post_embs, post_mask, rng=None, collect_att=None):
    """Global sequence embedding for a batch.

    post_embs: [B, T', E] stacked post embeddings; post_mask: [B, T'] bool
    validity. Returns [B, E]: the decoder output at each user's last
    valid position.
    """
    B, Tp, E = post_embs.shape
    mask = np.asarray(post_mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ContractError("encode_sequence: a user has no valid post")
    if Tp > config.window:
        raise ContractError(f"sequence length {Tp} exceeds window {config.window}")
    if config.variant in ("no_local_global", "baseline_meanpool"):
        return _masked_mean(post_embs, mask)
    h = post_embs + _rows(params["post_pos"], Tp)
    for i in range(config.dec_layers):
        h, att = _transformer_block(
            params, f"dec{i}", h, mask, config.heads, causal=True,
            dropout=config.dropout, rng=rng,
        )
        if collect_att is not None:
            collect_att.append(att)
    # readout at the last valid position
    last = mask.shape[-1] - 1 - mask[:, ::-1].argmax(axis=-1)
    onehot = np.zeros((B, Tp, 1))
    onehot[np.arange(B), last, 0] = 1.0
    return T.sum_axis(h * onehot, axis=1)


def encode_sequence(params, config, post_embs, post_mask):
    """Single-user wrapper: post_embs [T', E] -> [E]."""
    stacked = T.reshape(post_embs, (1,) + post_embs.shape)
    mask = np.asarray(post_mask, dtype=bool)[None, :]
    return T.reshape(encode_sequence_batch(params, config, stacked, mask), (-1,))


def classify(params, emb):
    """Class probabilities (benign, bad) from sequence embeddings [..., E]."""
    if emb.ndim == 1:
        emb = T.reshape(emb, (1, -1))
        return T.reshape(T.softmax_lastdim(emb @ params["clf_w"]), (-1,))
    return T.softmax_lastdim(emb @ params["clf_w"])


def predict_label(probs):
    """Argmax with ties broken toward label 1 (bad)."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return (p[..., 1] >= p[..., 0]).astype(np.int64)


def project(params, emb):
    """Contrastive projection z = relu(emb W1) W2, rowwise over [..., E]."""
    if emb.ndim == 1:
        emb = T.reshape(emb, (1, -1))
        return T.reshape(T.relu(emb @ params["proj_w1"]) @ params["proj_w2"], (-1,))
    return T.relu(emb @ params["proj_w1"]) @ params["proj_w2"]


def _pad_batch(users, window):
    """Stack variable-length UserSequences into padded id/mask arrays."""
    B = len(users)
    Tp = max(u.n_posts for u in users)
    d = users[0].tokens.shape[1]
    ids = np.zeros((B, Tp, d), dtype=np.int64)
    tok_mask = np.zeros((B, Tp, d), dtype=bool)
    post_mask = np.zeros((B, Tp), dtype=bool)
    for i, u in enumerate(users):
        n = u.n_posts
        ids[i, :n] = u.tokens
        tok_mask[i, :n] = u.tok_mask
        post_mask[i, :n] = True
    # padded post slots must not trip the all-masked softmax check; their
    # embeddings are excluded downstream by post_mask
    tok_mask[~post_mask, 0] = True
    return ids, tok_mask, post_mask


def forward_batch(params, config, users, rng=None):
    """Full pipeline for a batch of UserSequences.

    Returns (embs [B,E], probs [B,2], z [B,E]) as graph tensors.
    """
    ids, tok_mask, post_mask = _pad_batch(users, config.window)
    post_embs = encode_posts_batch(params, config, ids, tok_mask, rng=rng)
    embs = encode_sequence_batch(params, config, post_embs, post_mask, rng=rng)
    probs = classify(params, embs)
    z = project(params, embs)
    return embs, probs, z


def forward(params, config, user, rng=None):
    """Single-user pipeline: (SequenceEmbedding [E], probs [2], z [E])."""
    embs, probs, z = forward_batch(params, config, [user], rng=rng)
    return T.reshape(embs, (-1,)), T.reshape(probs, (-1,)), T.reshape(z, (-1,))
