import json

import numpy as np
import pytest

from robad.data import (
    PAD,
    UNK,
    CorpusError,
    RawUser,
    Vocab,
    gen_synthetic,
    kfold_split,
    load_corpus,
    preprocess,
    save_corpus,
    tokenize,
)
from robad.tensor import ContractError


def _mkuser(uid, label, texts):
    return RawUser(uid, label, [(t, i) for i, t in enumerate(texts)])


def test_load_empty_file(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text("")
    assert load_corpus(path) == []


def test_corpus_round_trip(tmp_path):
    users = [_mkuser("u1", 1, ["a b c d e", "f g h i j k"])]
    path = tmp_path / "c.jsonl"
    save_corpus(users, path)
    back = load_corpus(path)
    assert back == users


def test_missing_label_names_line(tmp_path):
    path = tmp_path / "c.jsonl"
    good = {"user_id": "u", "label": 0, "posts": [{"text": "a b c d e", "ts": 1}]}
    path.write_text(json.dumps(good) + "\n" + '{"user_id": "x", "posts": []}\n')
    with pytest.raises(CorpusError, match=":2"):
        load_corpus(path)


def test_nondecreasing_timestamps_enforced():
    with pytest.raises(CorpusError):
        RawUser("u", 0, [("a b c d e", 5), ("f g h i j", 3)])


def test_short_user_excluded():
    users = [
        _mkuser("few", 1, ["one two three four five"] * 4),
        _mkuser("ok", 0, ["one two three four five"] * 5),
    ]
    seqs, _ = preprocess(users)
    assert [s.user_id for s in seqs] == ["ok"]


def test_short_post_dropped_before_user_count():
    texts = ["tiny post here"] + ["one two three four five"] * 4
    users = [_mkuser("u", 1, texts), _mkuser("ok", 0, ["a b c d e f"] * 5)]
    seqs, _ = preprocess(users)
    # the 3-token post is dropped first, leaving only 4 posts -> user excluded
    assert [s.user_id for s in seqs] == ["ok"]


def test_recent_window_kept():
    texts = [f"tok{i} a b c d" for i in range(25)]
    users = [_mkuser("u", 1, texts), _mkuser("v", 0, ["a b c d e"] * 5)]
    seqs, vocab = preprocess(users, min_freq=1)
    u = next(s for s in seqs if s.user_id == "u")
    assert u.n_posts == 20
    first_tok = {t for t, i in vocab.token_to_id.items() if i == u.tokens[0][0]}
    assert first_tok == {"tok5"}


def test_tokenize_lowercases():
    assert tokenize("Foo BAR baz") == ["foo", "bar", "baz"]


def test_vocab_min_freq_and_unk():
    vocab = Vocab.build([["rare", "common", "common"]], min_freq=2)
    assert vocab.encode("common") >= 2
    assert vocab.encode("rare") == UNK
    assert vocab.encode("<pad>") == PAD


def test_vocab_file_round_trip(tmp_path):
    vocab = Vocab.build([["aa", "aa", "bb", "bb"]], min_freq=2)
    path = tmp_path / "v.txt"
    vocab.save(path)
    back = Vocab.load(path)
    assert back.token_to_id == vocab.token_to_id


def test_no_id_exceeds_vocab_and_pad_masked():
    users = gen_synthetic(20, 0.5, seed=2)
    seqs, vocab = preprocess(users)
    for s in seqs:
        assert s.tokens.max() < vocab.size
        assert (s.tokens[~s.tok_mask] == PAD).all()
        assert s.tok_mask.any(axis=1).all()


def test_preprocess_idempotent():
    users = gen_synthetic(20, 0.7, seed=3)
    seqs, vocab = preprocess(users, min_freq=1)
    inv = vocab.id_to_token()
    rebuilt = []
    for s in seqs:
        texts = [
            " ".join(inv[t] for t in row[mask])
            for row, mask in zip(s.tokens, s.tok_mask)
        ]
        rebuilt.append(_mkuser(s.user_id, s.label, texts))
    seqs2, _ = preprocess(rebuilt, min_freq=1, vocab=vocab)
    for a, b in zip(seqs, seqs2):
        assert np.array_equal(a.tokens, b.tokens)
        assert np.array_equal(a.tok_mask, b.tok_mask)


def test_vocab_built_without_test_leakage():
    users = gen_synthetic(40, 0.6, seed=4)
    train, test = users[:30], users[30:]
    train_seqs, vocab_train_only = preprocess(train)
    _, vocab_again = preprocess(train)  # rebuilding without test changes nothing
    assert vocab_train_only.token_to_id == vocab_again.token_to_id
    encoded = [s.tokens.copy() for s in train_seqs]
    train_seqs2, _ = preprocess(train, vocab=vocab_train_only)
    for a, b in zip(encoded, train_seqs2):
        assert np.array_equal(a, b.tokens)


def test_preprocess_empty_raises():
    with pytest.raises(ContractError):
        preprocess([])


def test_kfold_partition():
    users = gen_synthetic(100, 0.5, seed=5)
    folds = kfold_split(users, k=5, seed=1)
    test_ids = [frozenset(u.user_id for u in test) for _, test in folds]
    assert all(len(t) == 20 for t in test_ids)
    for i in range(5):
        for j in range(i + 1, 5):
            assert not (test_ids[i] & test_ids[j])
    assert frozenset.union(*test_ids) == {u.user_id for u in users}


def test_kfold_stratified_balance():
    users = gen_synthetic(100, 0.5, seed=6)
    for _, test in kfold_split(users, k=5, seed=2):
        labels = [u.label for u in test]
        assert abs(sum(labels) - (len(labels) - sum(labels))) <= 1


def test_kfold_deterministic():
    users = gen_synthetic(50, 0.5, seed=7)
    a = kfold_split(users, k=5, seed=3)
    b = kfold_split(users, k=5, seed=3)
    for (_, ta), (_, tb) in zip(a, b):
        assert [u.user_id for u in ta] == [u.user_id for u in tb]


def test_kfold_too_few_users():
    users = gen_synthetic(10, 0.5, seed=8)
    with pytest.raises(ContractError):
        kfold_split(users[:3], k=5, seed=0)


def test_synthetic_class_separation():
    users = gen_synthetic(20, 1.0, seed=9)
    benign_toks = {
        t for u in users if u.label == 0 for text, _ in u.posts for t in text.split()
    }
    bad_toks = {
        t for u in users if u.label == 1 for text, _ in u.posts for t in text.split()
    }
    assert not ({t for t in benign_toks if t.startswith("bad")})
    assert not ({t for t in bad_toks if t.startswith("ben")})


def test_synthetic_deterministic_and_balanced():
    a = gen_synthetic(30, 0.5, seed=10)
    b = gen_synthetic(30, 0.5, seed=10)
    assert a == b
    assert sum(u.label for u in a) == 15


def test_synthetic_minimum_users():
    with pytest.raises(ContractError):
        gen_synthetic(5, 0.5, seed=0)


def test_synthetic_timestamps_increase():
    for u in gen_synthetic(12, 0.5, seed=11):
        ts = [t for _, t in u.posts]
        assert all(b > a for a, b in zip(ts, ts[1:]))
