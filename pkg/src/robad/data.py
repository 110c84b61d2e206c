"""Corpus loading, preprocessing, vocabulary, CV splits, synthetic data.

Corpus file format: UTF-8 JSON lines, one user per line with keys
`user_id` (string), `label` (0/1), `posts` (list of {"text", "ts"} with
ts ascending). Vocab file format: one token per line, id = line number,
lines 0 and 1 fixed to <pad> and <unk>.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

MIN_TOKENS_PER_POST = 5
MIN_POSTS_PER_USER = 5
DEFAULT_WINDOW = 20
DEFAULT_TOKENS_PER_POST = 30


class CorpusError(ValueError):
    """Corpus file is malformed or empty after filtering."""


@dataclass
class RawUser:
    user_id: str
    label: int
    posts: list  # [(text, ts)] ordered by ts ascending

    def __post_init__(self):
        if self.label not in (0, 1):
            raise CorpusError(f"user {self.user_id}: label must be 0 or 1")
        ts = [t for _, t in self.posts]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise CorpusError(f"user {self.user_id}: timestamps not nondecreasing")


@dataclass
class UserSequence:
    """Tokenized window of one user's most recent posts.

    tokens is [n_posts, d] int ids, tok_mask marks real (non-pad) tokens.
    """

    user_id: str
    label: int
    tokens: np.ndarray
    tok_mask: np.ndarray

    @property
    def n_posts(self):
        return self.tokens.shape[0]

    def copy(self):
        return UserSequence(
            self.user_id, self.label, self.tokens.copy(), self.tok_mask.copy()
        )


@dataclass
class Vocab:
    token_to_id: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.token_to_id)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}

    @classmethod
    def build(cls, texts, min_freq=2):
        """Fit on an iterable of token lists; below-min_freq tokens map to UNK."""
        counts = Counter()
        for toks in texts:
            counts.update(toks)
        vocab = cls()
        for tok in sorted(counts):
            if counts[tok] >= min_freq and tok not in (PAD_TOKEN, UNK_TOKEN):
                vocab.token_to_id[tok] = len(vocab.token_to_id)
        return vocab

    def encode(self, tok):
        return self.token_to_id.get(tok, UNK)

    def id_to_token(self):
        return {i: t for t, i in self.token_to_id.items()}

    def save(self, path):
        inv = self.id_to_token()
        with open(path, "w", encoding="utf-8") as f:
            for i in range(self.size):
                f.write(inv[i] + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f]
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise CorpusError(f"{path}: first two vocab lines must be <pad>, <unk>")
        return cls({t: i for i, t in enumerate(tokens)})


def tokenize(text):
    """Lowercased whitespace tokens."""
    return text.lower().split()


def load_corpus(path):
    """Parse a JSON-lines corpus file into RawUsers."""
    users = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid record: {e}") from e
            for key in ("user_id", "label", "posts"):
                if key not in rec:
                    raise CorpusError(f"{path}:{lineno}: missing key {key!r}")
            try:
                posts = [(p["text"], int(p["ts"])) for p in rec["posts"]]
                users.append(RawUser(str(rec["user_id"]), int(rec["label"]), posts))
            except (KeyError, TypeError, CorpusError) as e:
                raise CorpusError(f"{path}:{lineno}: {e}") from e
    return users


def save_corpus(users, path):
    with open(path, "w", encoding="utf-8") as f:
        for u in users:
            rec = {
                "user_id": u.user_id,
                "label": u.label,
                "posts": [{"text": t, "ts": ts} for t, ts in u.posts],
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def filter_users(users, window=DEFAULT_WINDOW):
    """Apply the post-length and post-count filters, keep the recent window.

    Returns [(user, [token lists])]: posts with fewer than 5 tokens are
    dropped first, then users left with fewer than 5 posts are excluded,
    then only each user's most recent `window` posts are kept.
    """
    kept = []
    for u in users:
        posts = [tokenize(text) for text, _ in u.posts]
        posts = [p for p in posts if len(p) >= MIN_TOKENS_PER_POST]
        if len(posts) < MIN_POSTS_PER_USER:
            continue
        kept.append((u, posts[-window:]))
    return kept


def encode_user(user, token_lists, vocab, d=DEFAULT_TOKENS_PER_POST):
    """Map one user's filtered token lists to a padded UserSequence."""
    n = len(token_lists)
    tokens = np.full((n, d), PAD, dtype=np.int64)
    mask = np.zeros((n, d), dtype=bool)
    for i, toks in enumerate(token_lists):
        toks = toks[:d]
        tokens[i, : len(toks)] = [vocab.encode(t) for t in toks]
        mask[i, : len(toks)] = True
    return UserSequence(user.user_id, user.label, tokens, mask)


def preprocess(
    users,
    min_freq=2,
    d=DEFAULT_TOKENS_PER_POST,
    window=DEFAULT_WINDOW,
    vocab=None,
):
    """Filter, tokenize and encode a user list.

    When vocab is None a vocabulary is fitted on the retained text (this
    is the training-split path); pass an existing vocab to encode held-out
    users without leakage.
    """
    if not users:
        raise ContractError("preprocess: empty user list")
    filtered = filter_users(users, window=window)
    if not filtered:
        raise ContractError("preprocess: no users survive filtering")
    if vocab is None:
        vocab = Vocab.build(
            (toks for _, posts in filtered for toks in posts), min_freq=min_freq
        )
    seqs = [encode_user(u, posts, vocab, d=d) for u, posts in filtered]
    return seqs, vocab


def kfold_split(users, k=5, seed=0):
    """Stratified k-fold partitions, deterministic per seed.

    Yields k (train, test) pairs of user lists; folds are disjoint and
    their union is the input.
    """
    if len(users) < k:
        raise ContractError(f"kfold_split: {len(users)} users < k={k}")
    labels = {u.label if hasattr(u, "label") else u[0].label for u in users}
    if labels != {0, 1}:
        raise ContractError("kfold_split: both labels must be present")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for label in (0, 1):
        group = [u for u in users if _label_of(u) == label]
        order = rng.permutation(len(group))
        for slot, idx in enumerate(order):
            folds[slot % k].append(group[idx])
    out = []
    for i in range(k):
        test = folds[i]
        train = [u for j in range(k) if j != i for u in folds[j]]
        out.append((train, test))
    return out


def _label_of(u):
    return u.label if hasattr(u, "label") else u[0].label


def gen_synthetic(n_users, class_sep, seed=0):
    """Two-topic synthetic corpus standing in for the real platforms.

    Benign and bad users each own a 50-token topic vocabulary; 100 filler
    tokens are shared. Each token comes from the user's class vocabulary
    with probability class_sep, otherwise from the shared pool.
    """
    if n_users < 10:
        raise ContractError(f"gen_synthetic: n_users must be >= 10, got {n_users}")
    if not 0.0 <= class_sep <= 1.0:
        raise ContractError("gen_synthetic: class_sep must be in [0, 1]")
    rng = np.random.default_rng(seed)
    benign_vocab = [f"ben{i:02d}" for i in range(50)]
    bad_vocab = [f"bad{i:02d}" for i in range(50)]
    shared = [f"common{i:03d}" for i in range(100)]
    users = []
    for uid in range(n_users):
        label = uid % 2
        topic = bad_vocab if label == 1 else benign_vocab
        n_posts = int(rng.integers(8, 21))
        posts = []
        ts = int(rng.integers(0, 1000))
        for _ in range(n_posts):
            n_tok = int(rng.integers(6, 31))
            toks = [
                topic[rng.integers(len(topic))]
                if rng.random() < class_sep
                else shared[rng.integers(len(shared))]
                for _ in range(n_tok)
            ]
            posts.append((" ".join(toks), ts))
            ts += int(rng.integers(1, 100))
        users.append(RawUser(f"u{uid:04d}", label, posts))
    return users
