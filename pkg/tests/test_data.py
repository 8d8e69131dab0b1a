import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgdefend.data import (
    DataError,
    Dataset,
    Record,
    load_records,
    preprocess_record,
    rebalance,
    save_records,
    split_dataset,
    synthesize_ecg,
)


def make_dataset(counts: dict[str, int], length: int = 4) -> Dataset:
    records = []
    for label, count in counts.items():
        for i in range(count):
            records.append(Record(f"{label.lower()}{i}", np.ones(length), label))
    return Dataset(records)


# -- preprocessing ---------------------------------------------------------------


def test_preprocess_exact_length_is_unchanged():
    record = Record("a", np.arange(9000, dtype=float), "Normal")
    out = preprocess_record(record)
    assert out.samples.shape == (9000,)
    assert np.array_equal(out.samples, record.samples)


def test_preprocess_pads_symmetrically():
    record = Record("a", np.ones(8998), "Normal")
    out = preprocess_record(record)
    assert out.samples.shape == (9000,)
    assert out.samples[0] == 0.0 and out.samples[-1] == 0.0
    assert np.all(out.samples[1:-1] == 1.0)


def test_preprocess_odd_deficit_puts_extra_zero_on_right():
    record = Record("a", np.ones(8997), "Normal")
    out = preprocess_record(record)
    assert np.array_equal(out.samples[:1], [0.0])
    assert np.array_equal(out.samples[-2:], [0.0, 0.0])
    assert out.samples[1] == 1.0


def test_preprocess_truncates_to_first_samples():
    record = Record("a", np.arange(12000, dtype=float), "Normal")
    out = preprocess_record(record)
    assert np.array_equal(out.samples, np.arange(9000, dtype=float))


@given(st.integers(1, 400))
@settings(max_examples=40, deadline=None)
def test_preprocess_always_hits_target_and_is_idempotent(n):
    record = Record("a", np.ones(n), "Normal")
    once = preprocess_record(record, target_length=200)
    again = preprocess_record(once, target_length=200)
    assert once.samples.shape == (200,)
    assert np.array_equal(once.samples, again.samples)


# -- rebalancing -----------------------------------------------------------------


def test_rebalance_paper_counts():
    dataset = make_dataset({"Normal": 5076, "AF": 758, "Other": 2415, "Noise": 279},
                           length=1)
    out = rebalance(dataset)
    counts = out.class_counts()
    assert counts["Noise"] == 1674
    assert counts["AF"] == 1516
    assert counts["Normal"] == 5076
    assert counts["Other"] == 2415
    assert len(out) == 8528 + 5 * 279 + 758 == 10681


def test_rebalance_preserves_originals_and_suffixes_duplicates():
    dataset = make_dataset({"Noise": 2, "Normal": 1})
    out = rebalance(dataset)
    ids = [r.id for r in out.records]
    assert ids[: len(dataset)] == [r.id for r in dataset.records]
    assert "noise0_dup1" in ids and "noise0_dup5" in ids
    for record in out.records:
        assert np.array_equal(record.samples, np.ones(4))


def test_rebalance_alternative_multiplier():
    dataset = make_dataset({"Noise": 10})
    out = rebalance(dataset, noise_extra_copies=4)
    assert out.class_counts()["Noise"] == 50


# -- splitting -------------------------------------------------------------------


def test_split_sizes():
    dataset = make_dataset({"Normal": 100})
    train, test = split_dataset(dataset, 0.9, seed=1)
    assert len(train) == 90 and len(test) == 10


def test_split_deterministic_and_partition():
    dataset = make_dataset({"Normal": 30, "AF": 10})
    a_train, a_test = split_dataset(dataset, 0.75, seed=5)
    b_train, b_test = split_dataset(dataset, 0.75, seed=5)
    assert [r.id for r in a_train.records] == [r.id for r in b_train.records]
    assert [r.id for r in a_test.records] == [r.id for r in b_test.records]
    union = sorted(r.id for r in a_train.records + a_test.records)
    assert union == sorted(r.id for r in dataset.records)


def test_split_rejects_bad_fraction():
    dataset = make_dataset({"Normal": 10})
    with pytest.raises(DataError):
        split_dataset(dataset, 1.0, seed=0)


# -- synthesis -------------------------------------------------------------------


def test_synthesize_is_deterministic():
    a = synthesize_ecg(5, 128, seed=3)
    b = synthesize_ecg(5, 128, seed=3)
    for ra, rb in zip(a.records, b.records):
        assert ra.id == rb.id and ra.label == rb.label
        assert np.array_equal(ra.samples, rb.samples)


def test_synthesize_respects_length_and_counts():
    dataset = synthesize_ecg(7, 512, seed=1)
    assert len(dataset) == 28
    assert all(r.samples.shape == (512,) for r in dataset.records)
    assert dataset.class_counts() == {"Normal": 7, "AF": 7, "Other": 7, "Noise": 7}


def test_synthesize_validates_arguments():
    with pytest.raises(DataError):
        synthesize_ecg(0, 128, seed=0)
    with pytest.raises(DataError):
        synthesize_ecg(5, 32, seed=0)


def test_synthetic_classes_are_learnable(tiny_defense, tiny_data):
    # Held-out accuracy of the small CNN proves the four families differ.
    from ecgdefend.models import predict_batch

    _, (Xte, yte) = tiny_data
    pred, _ = predict_batch(tiny_defense.deployable, Xte)
    assert np.mean(pred == yte) >= 0.9


# -- disk layout ------------------------------------------------------------------


def test_save_and_load_round_trip(tmp_path):
    dataset = synthesize_ecg(2, 100, seed=9)
    index = save_records(dataset, tmp_path / "layout")
    loaded = load_records(tmp_path / "layout", index)
    assert [r.id for r in loaded.records] == [r.id for r in dataset.records]
    for original, restored in zip(dataset.records, loaded.records):
        np.testing.assert_allclose(original.samples, restored.samples, atol=1e-15)
        assert original.label == restored.label


def test_load_records_preserves_index_order(tmp_path):
    directory = tmp_path / "three"
    directory.mkdir()
    for name in ("rec_b", "rec_a", "rec_c"):
        (directory / f"{name}.txt").write_text("1.0\n2.0\n")
    (directory / "index.csv").write_text("rec_b,Normal\nrec_a,AF\nrec_c,~\n")
    dataset = load_records(directory, directory / "index.csv")
    assert [r.id for r in dataset.records] == ["rec_b", "rec_a", "rec_c"]
    assert [r.label for r in dataset.records] == ["Normal", "AF", "Noise"]


def test_load_records_empty_index_fails(tmp_path):
    directory = tmp_path / "empty"
    directory.mkdir()
    (directory / "index.csv").write_text("")
    with pytest.raises(DataError, match="no records"):
        load_records(directory, directory / "index.csv")


def test_load_records_missing_file_lists_ids(tmp_path):
    directory = tmp_path / "missing"
    directory.mkdir()
    (directory / "a.txt").write_text("1.0\n")
    (directory / "index.csv").write_text("a,Normal\nb,AF\nc,Other\n")
    with pytest.raises(DataError, match="b, c"):
        load_records(directory, directory / "index.csv")


def test_load_records_unknown_label_fails(tmp_path):
    directory = tmp_path / "bad"
    directory.mkdir()
    (directory / "a.txt").write_text("1.0\n")
    (directory / "index.csv").write_text("a,Ventricular\n")
    with pytest.raises(DataError, match="Ventricular"):
        load_records(directory, directory / "index.csv")


def test_to_arrays_requires_uniform_length():
    dataset = Dataset(
        [Record("a", np.ones(5), "Normal"), Record("b", np.ones(6), "AF")]
    )
    with pytest.raises(DataError, match="mixed lengths"):
        dataset.to_arrays()
