import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from conceptrec import dataset as ds
from conftest import write_csv


def test_toy_csv_counts(tmp_path):
    path = write_csv(tmp_path / "toy.csv", [(7, 1, "fractions", 1, 1), (7, 2, "decimals", 0, 2), (9, 1, "fractions", 1, 3)])
    catalog, records, drops = ds.ingest_csv(path)
    assert (catalog.N, catalog.M, len(records)) == (2, 2, 3)
    assert catalog.concepts == ["fractions", "decimals"]
    assert catalog.learner_keys == ["7", "9"]
    assert drops == {}


def test_empty_file_with_header_is_rejected(tmp_path):
    path = write_csv(tmp_path / "empty.csv", [])
    with pytest.raises(ds.IngestError, match="zero valid rows"):
        ds.ingest_csv(path)


def test_missing_column_is_named(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("user_id,correct,order_id\n1,1,1\n")
    with pytest.raises(ds.IngestError, match="concept"):
        ds.ingest_csv(path)


def test_rows_without_fields_are_dropped_and_counted(tmp_path):
    rows = [(1, 5, "a", 1, 1), ("", 5, "a", 1, 2), (1, "", "", 1, 3), (1, 6, "b", "", 4), (1, 6, "b", "0", 5)]
    catalog, records, drops = ds.ingest_csv(write_csv(tmp_path / "d.csv", rows))
    assert len(records) == 2
    assert drops == {"missing_learner": 1, "missing_concept": 1, "missing_correct": 1}


def test_multi_skill_rows_keep_first_concept(tmp_path):
    rows = [(1, "10_11", "add~~sub", 1, 1), (1, 11, "sub", 0, 2)]
    catalog, records, _ = ds.ingest_csv(write_csv(tmp_path / "m.csv", rows))
    assert catalog.concept_keys == ["10", "11"]
    assert catalog.concepts == ["add", "sub"]


def test_custom_schema(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("student,kc,ok,ts\na,x,1,2\na,y,0,1\n")
    catalog, records, _ = ds.ingest_csv(path, {"learner": "student", "concept": "kc", "correct": "ok", "order": "ts"})
    assert catalog.M == 2
    seq = ds.build_sequences(records)[0]
    assert seq.concepts == [1, 0]  # sorted by ts


def test_reingest_is_identical(tmp_path):
    path = write_csv(tmp_path / "r.csv", [(1, 3, "c", 1, 2), (2, 4, "d", 0, 1), (1, 4, "d", 1, 1)])
    assert ds.ingest_csv(path) == ds.ingest_csv(path)


def test_profiles_fill_missing_learner_text(tmp_path):
    path = write_csv(tmp_path / "p.csv", [(1, 3, "ratios", 1, 1)])
    catalog, _, _ = ds.ingest_csv(path)
    assert catalog.learners[0].startswith("student 1")
    assert "ratios" in catalog.learners[0]


def _rec(u, k, t, ok=True, row=0):
    return ds.InteractionRecord(u, k, ok, t, row)


def test_sequences_are_sorted_by_time():
    seqs = ds.build_sequences([_rec(0, 2, 3.0), _rec(0, 1, 1.0), _rec(0, 0, 2.0)])
    assert seqs[0].concepts == [1, 0, 2]


def test_time_ties_keep_input_order():
    seqs = ds.build_sequences([_rec(0, 5, 1.0, row=0), _rec(0, 4, 1.0, row=1)])
    assert seqs[0].concepts == [5, 4]


def test_sequence_length_equals_interaction_count():
    seqs = ds.build_sequences([_rec(3, k, float(k)) for k in range(5)])
    assert len(seqs[0]) == 5


def test_leave_one_out_definition():
    seq = ds.LearnerSequence(0, ((10, True), (11, False), (12, True)))
    split = ds.split_leave_one_out([seq])
    assert split.test_targets == ((0, 12),)
    assert split.train_steps(0) == ((10, True), (11, False))
    # training contexts predict each training step from its prefix
    assert split.train_contexts == ((0, 1),)


def test_single_step_sequence_is_train_only():
    split = ds.split_leave_one_out([ds.LearnerSequence(0, ((4, True),))])
    assert split.test_targets == ()
    assert split.train_steps(0) == ((4, True),)


def test_ten_learners_give_ten_test_targets():
    seqs = [ds.LearnerSequence(u, tuple((k, True) for k in range(2 + u))) for u in range(10)]
    assert len(ds.split_leave_one_out(seqs).test_targets) == 10


@settings(max_examples=50, deadline=None)
@given(hst.lists(hst.lists(hst.integers(0, 9), min_size=1, max_size=12), min_size=1, max_size=8))
def test_split_never_leaks_the_test_step(lengths):
    seqs = [ds.LearnerSequence(u, tuple((k, True) for k in ks)) for u, ks in enumerate(lengths)]
    split = ds.split_leave_one_out(seqs)
    for u, p in split.train_contexts:
        assert 1 <= p < len(split.train_steps(u))
    for u, k in split.test_targets:
        assert split.sequences[u].concepts[-1] == k
        assert len(split.train_steps(u)) == len(split.sequences[u]) - 1


def test_corpus_stats():
    assert ds.corpus_stats([]) == ds.CorpusStats(0, 0, 0, 0.0)
    recs = [_rec(0, 0, 1), _rec(0, 1, 2), _rec(1, 0, 1), _rec(1, 1, 2)]
    assert ds.corpus_stats(recs).mean_length == 2.0


def test_corpus_files_round_trip(tmp_path):
    catalog = ds.Catalog(["a", "b"], ["s0"], ["ka", "kb"], ["u0"])
    recs = [_rec(0, 1, 1.5, False, 0), _rec(0, 0, 2.0, True, 1)]
    ds.write_corpus(tmp_path, catalog, recs)
    assert ds.read_corpus(tmp_path) == (catalog, recs)


def test_stratified_subsample_covers_rare_groups(rng):
    items = [("common", i) for i in range(100)] + [("rare", 0), ("rarer", 0)]
    picked = ds.stratified_subsample(items, 5, key=lambda it: it[0], rng=rng)
    assert len(picked) == 5
    assert {"rare", "rarer"} <= {g for g, _ in picked}


def test_subsample_is_deterministic():
    a = ds.subsample(range(50), 10, np.random.default_rng(0))
    b = ds.subsample(range(50), 10, np.random.default_rng(0))
    assert a == b == sorted(a)
