import io
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from bipcl.data import (
    EmptyLogError,
    ParseError,
    LogFormat,
    augment_sequence,
    filter_min_interactions,
    load_interactions,
    make_eval_instance,
    make_train_batch,
    read_manifest,
    sample_negatives,
    split_users,
    training_pairs,
    write_interactions,
    write_manifest,
)

from _oracles import brute_force_kcore


def _log(text, **kw):
    return load_interactions(io.BytesIO(text.encode()), LogFormat(**kw))


def test_load_small_log_sorts_within_user():
    log = _log("a\tx\t3\nb\ty\t1\na\tz\t1\n")
    assert log.n_users == 2
    a = log.user_index()["a"]
    assert [log.items[i] for i in log.sequences[a]] == ["z", "x"]
    assert log.timestamps[a] == [1, 3]


def test_ties_keep_input_order_and_duplicates_drop():
    log = _log("a,x,5\na,y,5\na,x,5\n", delimiter=",")
    assert [log.items[i] for i in log.sequences[0]] == ["x", "y"]


def test_configurable_columns():
    log = _log("10;item1;u1\n5;item2;u1\n", delimiter=";", user_col=2, item_col=1, time_col=0)
    assert [log.items[i] for i in log.sequences[0]] == ["item2", "item1"]


def test_malformed_line_reports_line_number():
    with pytest.raises(ParseError) as exc:
        _log("a\tx\t1\na\tx\n")
    assert exc.value.lineno == 2
    with pytest.raises(ParseError):
        _log("a\tx\tnotanumber\n")


def test_empty_input():
    with pytest.raises(EmptyLogError):
        _log("")


def test_round_trip_10k_lines(tmp_path):
    rng = np.random.default_rng(0)
    records = {(f"u{rng.integers(300)}", f"i{rng.integers(900)}", int(rng.integers(10**9))) for _ in range(10_000)}
    path = tmp_path / "log.tsv"
    write_interactions(sorted(records), path)
    log = load_interactions(str(path))
    assert Counter(log.records()) == Counter(records)


def _random_records(rng, n_users=40, n_items=30, n=500):
    return [(f"u{rng.integers(n_users)}", f"i{rng.integers(n_items)}", t) for t in range(n)]


def test_filter_keeps_dense_logs_unchanged():
    records = [(f"u{u}", f"i{i}", u * 10 + i) for u in range(6) for i in range(5)]
    log = filter_min_interactions(load_interactions(io.StringIO("".join(f"{u}\t{i}\t{t}\n" for u, i, t in records))), 5)
    assert log.n_users == 6 and log.n_items == 5 and log.n_actions == 30


def test_filter_drops_short_user_and_orphaned_items():
    lines = [f"u{u}\ti{i}\t{i}\n" for u in range(5) for i in range(5)]
    lines += ["short\tlonely\t1\n", "short\ti0\t2\n"]
    log = filter_min_interactions(load_interactions(io.StringIO("".join(lines))), 5)
    assert "short" not in log.users and "lonely" not in log.items


@pytest.mark.parametrize("seed", range(5))
def test_filter_matches_iterative_pruning_oracle(seed):
    rng = np.random.default_rng(seed)
    records = _random_records(rng)
    text = "".join(f"{u}\t{i}\t{t}\n" for u, i, t in records)
    log = filter_min_interactions(load_interactions(io.StringIO(text)), 5)
    expected = brute_force_kcore(records, 5)
    assert Counter(log.records()) == Counter(expected)
    users = Counter(u for u, _, _ in log.records())
    items = Counter(i for _, i, _ in log.records())
    assert min(users.values()) >= 5 and min(items.values()) >= 5


def test_filter_everything_raises():
    with pytest.raises(EmptyLogError):
        filter_min_interactions(_log("a\tx\t1\n"), 5)


def _users_log(n):
    text = "".join(f"u{u:03d}\ti{t}\t{t}\n" for u in range(n) for t in range(2))
    return load_interactions(io.StringIO(text))


@pytest.mark.parametrize("n,sizes", [(10, (8, 1, 1)), (100, (80, 10, 10)), (17, (15, 1, 1))])
def test_split_sizes_and_partition(n, sizes):
    log = _users_log(n)
    s = split_users(log, seed=3)
    assert (len(s.train), len(s.val), len(s.test)) == sizes
    assert set(s.train) | set(s.val) | set(s.test) == set(log.users)
    assert not set(s.train) & set(s.val) and not set(s.val) & set(s.test) and not set(s.train) & set(s.test)


def test_split_deterministic_and_manifest_round_trip(tmp_path):
    log = _users_log(50)
    a, b = split_users(log, 7), split_users(log, 7)
    assert a == b
    assert split_users(log, 8) != a
    write_manifest(a, tmp_path / "m.bin")
    assert read_manifest(tmp_path / "m.bin") == a


@pytest.mark.parametrize("n,inputs,targets", [(10, 8, 2), (5, 4, 1), (2, 1, 1)])
def test_eval_instance_split(n, inputs, targets):
    inst = make_eval_instance(0, list(range(n)))
    assert len(inst.input_items) == inputs and len(inst.targets) == targets
    assert list(inst.input_items + inst.targets) == list(range(n))


def test_eval_instance_too_short():
    assert make_eval_instance(0, [1]) is None


def test_train_batch_left_padding():
    rng = np.random.default_rng(0)
    b = make_train_batch(training_pairs([[0, 1, 2]]), T=20, n=3, n_items=10, rng=rng)
    assert b.sequences[0, -2:].tolist() == [0, 1]
    assert np.all(b.sequences[0, :-2] == 10)
    assert b.positives.tolist() == [2] and b.valid_lengths.tolist() == [2]


def test_train_batch_truncates_to_T():
    b = make_train_batch(training_pairs([list(range(30))]), T=5, n=2, n_items=40, rng=np.random.default_rng(0))
    assert b.sequences[0].tolist() == [24, 25, 26, 27, 28] and b.positives[0] == 29


def test_all_prefix_pairs():
    assert training_pairs([[4, 5, 6]], all_prefixes=True) == [([4], 5), ([4, 5], 6)]


def test_negatives_exclude_positive():
    rng = np.random.default_rng(1)
    pos = rng.integers(0, 5, size=200)
    neg = sample_negatives(pos, 10, 5, rng)
    assert neg.shape == (200, 10)
    assert not np.any(neg == pos[:, None])
    assert neg.min() >= 0 and neg.max() < 5


def test_negative_draws_are_uniform():
    rng = np.random.default_rng(2)
    pos = np.full(10_000, -1)  # no collisions so raw draws are tested
    neg = sample_negatives(pos, 10, 50, rng).ravel()
    counts = np.bincount(neg, minlength=50)
    assert stats.chisquare(counts).pvalue > 0.01


def test_augment_crop_tiny_strength_keeps_everything():
    rng = np.random.default_rng(0)
    assert augment_sequence([1, 2, 3, 4], "crop", 1e-9, rng, pad=99) == [1, 2, 3, 4]


def test_augment_mask_count():
    rng = np.random.default_rng(0)
    out = augment_sequence([1, 2, 3, 4], "mask", 0.5, rng, pad=99)
    assert out.count(99) == 2 and len(out) == 4


@pytest.mark.parametrize("seed", range(10))
def test_augment_reorder_permutes_a_window(seed):
    rng = np.random.default_rng(seed)
    seq = list(range(10))
    out = augment_sequence(seq, "reorder", 0.4, rng, pad=99)
    assert Counter(out) == Counter(seq)
    changed = [i for i, (a, b) in enumerate(zip(seq, out)) if a != b]
    if changed:
        assert changed[-1] - changed[0] + 1 <= 4


@pytest.mark.parametrize("mode", ["mask", "crop", "reorder"])
@pytest.mark.parametrize("n", [1, 2, 7])
def test_augment_never_empty(mode, n):
    rng = np.random.default_rng(n)
    out = augment_sequence(list(range(n)), mode, 0.9, rng, pad=99)
    assert len(out) >= 1 and any(x != 99 for x in out)
    assert all(0 <= x < n or x == 99 for x in out)
