import numpy as np
import pytest

from dilrec.data import (
    k_core_filter,
    load_interactions,
    log_from_records,
    split_by_time,
    universe_at,
)
from dilrec.errors import DataError

from conftest import make_log


# --- loading ----------------------------------------------------------------

def test_load_sorts_by_timestamp(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text("a\tp\t30\nb\tq\t10\nc\tr\t20\n")
    log = load_interactions(path)
    assert list(log.timestamps) == [10, 20, 30]
    assert [log.record(i).user_id for i in range(3)] == ["b", "c", "a"]


def test_load_dedups_exact_triples(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text("a\tp\t10\na\tp\t10\na\tp\t11\n")
    log = load_interactions(path)
    assert len(log) == 2


def test_load_ties_keep_input_order(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text("a\tp\t10\nb\tq\t10\n")
    log = load_interactions(path)
    assert [log.record(i).user_id for i in range(2)] == ["a", "b"]


def test_load_reports_bad_timestamp_line(tmp_path):
    path = tmp_path / "x.tsv"
    lines = [f"u{i}\ti{i}\t{i}" for i in range(6)] + ["u9\ti9\tnotanumber"]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError) as exc:
        load_interactions(path)
    assert "line 7" in str(exc.value)


def test_load_rejects_wrong_field_count(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text("a\tp\t10\nbroken line\n")
    with pytest.raises(DataError) as exc:
        load_interactions(path)
    assert "line 2" in str(exc.value)


def test_load_empty_file_errors(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text("")
    with pytest.raises(DataError):
        load_interactions(path)


def test_dense_ids_follow_first_appearance():
    log = make_log([(5, 9, 0), (2, 9, 1), (5, 1, 2)])
    assert list(log.users) == [0, 1, 0]
    assert list(log.items) == [0, 0, 1]
    assert universe_at(log, 1) == (1, 1)
    assert universe_at(log, 3) == (2, 2)


# --- k-core -----------------------------------------------------------------

def brute_force_k_core(triples, k):
    """Independent fixpoint oracle: drop one under-degree node at a time."""
    records = list(triples)
    while True:
        from collections import Counter

        u_deg = Counter(u for u, _, _ in records)
        i_deg = Counter(i for _, i, _ in records)
        bad_users = {u for u, d in u_deg.items() if d < k}
        bad_items = {i for i, d in i_deg.items() if d < k}
        if not bad_users and not bad_items:
            return records
        victim_user = min(bad_users) if bad_users else None
        victim_item = min(bad_items) if bad_items else None
        if victim_user is not None:
            records = [r for r in records if r[0] != victim_user]
        else:
            records = [r for r in records if r[1] != victim_item]


def test_k_core_identity_when_degrees_suffice():
    triples = [(u, i, 10 * u + i) for u in range(3) for i in range(3)]
    log = make_log(triples)
    out = k_core_filter(log, 3)
    assert len(out) == len(log)
    assert list(out.timestamps) == list(log.timestamps)


def test_k_core_k1_is_identity():
    log = make_log([(0, 0, 0), (1, 1, 5)])
    out = k_core_filter(log, 1)
    assert len(out) == 2


def test_k_core_chain_removal_matches_fixpoint_oracle():
    # removing item b drops user 1 below k, whose removal drops item c
    triples = [
        (0, 0, 0), (0, 1, 1), (1, 1, 2), (1, 2, 3),
        (2, 0, 4), (2, 3, 5), (3, 0, 6), (3, 3, 7), (2, 0, 8),
    ]
    k = 2
    expected = brute_force_k_core([(f"u{u}", f"i{i}", t) for u, i, t in triples], k)
    out = k_core_filter(make_log(triples), k)
    got = [(out.record(i).user_id, out.record(i).item_id, out.record(i).timestamp) for i in range(len(out))]
    assert sorted(got) == sorted(expected)


def test_k_core_random_cases_match_oracle():
    rng = np.random.default_rng(11)
    for trial in range(10):
        triples = [
            (int(rng.integers(0, 6)), int(rng.integers(0, 6)), t) for t in range(25)
        ]
        log = make_log(triples)
        k = int(rng.integers(1, 4))
        expected = brute_force_k_core(
            [(f"u{u}", f"i{i}", t) for u, i, t in triples], k
        )
        try:
            out = k_core_filter(log, k)
        except DataError:
            assert not expected
            continue
        got = [
            (out.record(i).user_id, out.record(i).item_id, out.record(i).timestamp)
            for i in range(len(out))
        ]
        assert sorted(got) == sorted(set(expected)), f"trial {trial}"


def test_k_core_is_a_fixpoint():
    rng = np.random.default_rng(3)
    triples = [(int(rng.integers(0, 8)), int(rng.integers(0, 8)), t) for t in range(60)]
    once = k_core_filter(make_log(triples), 3)
    twice = k_core_filter(once, 3)
    assert len(once) == len(twice)
    assert np.array_equal(once.users, twice.users)
    assert np.array_equal(once.items, twice.items)


def test_k_core_empty_result_advises_smaller_k():
    log = make_log([(0, 0, 0), (1, 1, 1)])
    with pytest.raises(DataError) as exc:
        k_core_filter(log, 5)
    assert "smaller k" in str(exc.value)


# --- splitting --------------------------------------------------------------

def test_split_all_records_before_warmup_errors():
    log = make_log([(0, 0, t) for t in range(5)])
    with pytest.raises(DataError) as exc:
        split_by_time(log, 100, 10, 2)
    assert "0" in str(exc.value)


def test_split_boundary_record_goes_to_later_window():
    log = make_log([(0, 0, 5), (0, 1, 10), (0, 2, 15), (0, 3, 20), (0, 4, 25)])
    split = split_by_time(log, 10, 10, 2)
    # timestamp 10 sits exactly on the warm-up boundary: belongs to period 0
    assert split.warmup == (0, 1)
    s, e = split.periods[0]
    assert list(log.timestamps[s:e]) == [10, 15]
    s, e = split.periods[1]
    assert list(log.timestamps[s:e]) == [20, 25]


def test_split_uniform_timestamps_equal_periods():
    log = make_log([(0, 0, t) for t in range(70)])
    split = split_by_time(log, 10, 10, 6)
    sizes = [e - s for s, e in split.periods]
    assert sizes == [10] * 6  # counting oracle: 10 stamps per half-open decade
    assert split.warmup == (0, 10)


def test_split_drops_tail_records(caplog):
    log = make_log([(0, 0, t) for t in range(35)])
    split = split_by_time(log, 10, 10, 2)
    assert split.periods[-1][1] == 30  # stamps 30..34 dropped


def test_split_reports_empty_period_index():
    stamps = list(range(10)) + list(range(20, 30))
    log = make_log([(0, 0, t) for t in stamps])
    with pytest.raises(DataError) as exc:
        split_by_time(log, 5, 5, 5)
    assert "[1" in str(exc.value) or "1" in str(exc.value)


def test_split_requires_two_periods():
    log = make_log([(0, 0, t) for t in range(10)])
    with pytest.raises(DataError):
        split_by_time(log, 5, 5, 1)


def test_log_from_records_empty_errors():
    with pytest.raises(DataError):
        log_from_records([])
