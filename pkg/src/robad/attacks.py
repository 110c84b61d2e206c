"""Next-post attack simulators and sequence modification.

Each attack produces a new post for a target user; apply_attack appends
it and re-applies the recency window. Generation is a pure function of
(spec, user id, corpus fingerprint) so evaluation runs are reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .data import PAD, UserSequence
from .tensor import ContractError

ATTACK_KINDS = ("copy_append", "foreign_post", "ngram_gen")


@dataclass
class AttackSpec:
    kind: str
    seed: int = 0
    ngram_order: int = 2
    target_len: int = 30

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ContractError(f"attack kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if self.ngram_order < 1:
            raise ContractError("ngram_order must be >= 1")
        if self.target_len < 1:
            raise ContractError("target_len must be >= 1")


def _post_tokens(seq, i):
    """Token ids of post i with padding stripped."""
    return [int(t) for t in seq.tokens[i][seq.tok_mask[i]]]


def _corpus_fingerprint(corpus):
    h = hashlib.sha256()
    for u in corpus:
        h.update(u.user_id.encode())
        h.update(bytes([u.label]))
        h.update(u.tokens.tobytes())
    return h.digest()


def _rng_for(spec, user, corpus):
    material = hashlib.sha256(
        spec.kind.encode()
        + spec.seed.to_bytes(8, "little", signed=True)
        + user.user_id.encode()
        + _corpus_fingerprint(corpus)
    ).digest()
    return np.random.default_rng(int.from_bytes(material[:8], "little"))


def fit_ngram(posts, order):
    """Transition table of an n-gram chain over token ids.

    Context length is order-1 (order 2 = bigram transitions). Returns
    (starts, table): starts holds each post's initial context, table maps
    a context tuple to the observed next tokens (with multiplicity).
    """
    k = order - 1
    starts = []
    table = {}
    for toks in posts:
        if len(toks) < order:
            continue
        starts.append(tuple(toks[:k]))
        for i in range(len(toks) - k):
            key = tuple(toks[i : i + k])
            table.setdefault(key, []).append(toks[i + k])
    return starts, table


def _sample_ngram(rng, starts, table, length, k):
    out = list(starts[rng.integers(len(starts))])
    while len(out) < length:
        nexts = table.get(tuple(out[-k:]) if k else ())
        if not nexts:
            break  # dead-end context; emit the walk so far
        out.append(nexts[rng.integers(len(nexts))])
    return out[:length]


def generate_post(spec, user, corpus):
    """Produce the attacker's next post for one user as a token id list."""
    if user.n_posts < 1:
        raise ContractError("generate_post: user has no posts")
    rng = _rng_for(spec, user, corpus)
    if spec.kind == "copy_append":
        i = int(rng.integers(user.n_posts))
        return _post_tokens(user, i)
    donors = [
        u for u in corpus if u.label != user.label and u.user_id != user.user_id
    ]
    if not donors:
        raise ContractError(
            f"{spec.kind}: no opposite-label user available for {user.user_id}"
        )
    if spec.kind == "foreign_post":
        donor = donors[rng.integers(len(donors))]
        return _post_tokens(donor, int(rng.integers(donor.n_posts)))
    posts = [_post_tokens(u, i) for u in donors for i in range(u.n_posts)]
    starts, table = fit_ngram(posts, spec.ngram_order)
    if not starts:
        raise ContractError("ngram_gen: no donor post long enough to fit the chain")
    return _sample_ngram(rng, starts, table, spec.target_len, spec.ngram_order - 1)


def apply_attack(user, new_post, window=20):
    """Append the generated post and keep only the most recent `window` posts.

    The label and every pre-existing post are unchanged; the new post is
    padded/truncated to the per-post token budget.
    """
    if not len(new_post):
        raise ContractError("apply_attack: empty post")
    d = user.tokens.shape[1]
    row = np.full((1, d), PAD, dtype=np.int64)
    mask = np.zeros((1, d), dtype=bool)
    toks = list(new_post)[:d]
    row[0, : len(toks)] = toks
    mask[0, : len(toks)] = True
    tokens = np.concatenate([user.tokens, row])[-window:]
    tok_mask = np.concatenate([user.tok_mask, mask])[-window:]
    return UserSequence(user.user_id, user.label, tokens, tok_mask)


def attack_user(spec, user, corpus, window=20):
    """generate_post + apply_attack in one call."""
    return apply_attack(user, generate_post(spec, user, corpus), window=window)
