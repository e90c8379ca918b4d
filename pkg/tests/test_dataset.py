import numpy as np
import pytest
from hypothesis import given, strategies as st

from tlsxplain.dataset import (
    UNLABELED,
    LabeledDataset,
    adasyn,
    apply_scaler,
    binary_columns,
    dataset_from_csv,
    dataset_to_csv,
    fit_scaler,
    kfold_split,
    load_manifest,
    make_imbalanced,
    parse_manifest,
    read_csv,
    sum_samples,
    synthetic_count,
    train_test_split,
)
from tlsxplain.errors import (
    DegenerateMinority,
    DuplicateFamily,
    LengthMismatch,
    NonPositiveCount,
    SchemaMismatch,
    TooFewSamples,
)
from tlsxplain.features import default_schema
from tlsxplain.objects import FeatureVector

from .examples import datasets


# Manifest

def test_bundled_manifest_totals():
    entries = load_manifest()

    totals = sum_samples(entries)

    assert len(entries) == 54
    assert totals.by_family["TeslaCrypt"] == 331
    assert totals.by_family["Cerber"] == 124
    assert totals.by_type["Ransomware"] == 736
    assert totals.total == 1127


def test_manifest_duplicate_family():
    text = ("family,type,samples,source\n"
            "Cerber,Ransomware,3,a\n"
            "Cerber,Ransomware,4,a\n")

    with pytest.raises(DuplicateFamily):
        parse_manifest(text)


def test_manifest_same_family_other_source():
    text = ("family,type,samples,source\n"
            "Cerber,Ransomware,3,a\n"
            "Cerber,Ransomware,4,b\n")

    assert sum_samples(parse_manifest(text)).by_family == {"Cerber": 7}


@pytest.mark.parametrize("samples", ["0", "-2", "many"])
def test_manifest_bad_count(samples):
    text = f"family,type,samples,source\nCerber,Ransomware,{samples},a\n"

    with pytest.raises(NonPositiveCount):
        parse_manifest(text)


def test_manifest_missing_column():
    with pytest.raises(SchemaMismatch):
        parse_manifest("family,samples\nCerber,3\n")


# Dataset container

def test_dataset_shape_checks():
    with pytest.raises(LengthMismatch):
        LabeledDataset(X=np.zeros((3, 2)), y=np.zeros(2),
                       feature_names=["a", "b"])
    with pytest.raises(SchemaMismatch):
        LabeledDataset(X=np.zeros((3, 2)), y=np.zeros(3),
                       feature_names=["a"])


def test_default_flow_ids_and_counts():
    ds = datasets.blobs(5, 2)

    assert ds.flow_ids[:2] == ["row0", "row1"]
    assert ds.class_counts == {0: 5, 1: 2}
    assert ds.is_labeled
    assert ds.dimension == 4


def test_from_vectors_checks_schema_version():
    schema = default_schema()
    vector = FeatureVector(values=np.zeros(schema.dimension),
                           schema_version="tlsx-1-00000000",
                           label=None, flow_id="x")

    with pytest.raises(SchemaMismatch):
        LabeledDataset.from_vectors([vector], schema)


def test_from_vectors_marks_unlabeled():
    schema = default_schema()
    vector = FeatureVector(values=np.ones(schema.dimension),
                           schema_version=schema.schema_version,
                           label=None, flow_id="x")

    ds = LabeledDataset.from_vectors([vector], schema)

    assert ds.y.tolist() == [UNLABELED]
    assert not ds.is_labeled
    assert ds.feature_names == schema.names


# CSV

def test_csv_round_trip_keeps_values_exactly():
    ds = datasets.blobs(4, 3, seed=3)
    ds = LabeledDataset(X=ds.X, y=np.array([0, 0, 0, -1, 1, 1, 1]),
                        feature_names=ds.feature_names,
                        flow_ids=[f"cap#{i}" for i in range(7)])

    text = dataset_to_csv(ds)
    back = dataset_from_csv(text)

    assert text.splitlines()[0] == "f0,f1,f2,f3,label,flow_id"
    assert text.splitlines()[4].split(",")[-2] == ""
    assert back.X.tolist() == ds.X.tolist()
    assert back.y.tolist() == ds.y.tolist()
    assert back.flow_ids == ds.flow_ids


@given(st.lists(
    st.lists(st.floats(allow_nan=False, allow_infinity=False),
             min_size=3, max_size=3),
    min_size=1, max_size=8,
))
def test_csv_keeps_any_finite_value(rows):
    X = np.array(rows)
    ds = LabeledDataset(X=X, y=np.zeros(len(X), dtype=np.int64),
                        feature_names=["a", "b", "c"])

    back = dataset_from_csv(dataset_to_csv(ds))

    assert back.X.tolist() == X.tolist()
    assert np.array_equal(np.signbit(back.X), np.signbit(X))


def test_csv_keeps_negative_zero():
    ds = LabeledDataset(X=np.array([[-0.0, 0.0]]), y=np.array([1]),
                        feature_names=["a", "b"])

    text = dataset_to_csv(ds)

    assert text.splitlines()[1].startswith("-0.0,0,")
    assert np.signbit(dataset_from_csv(text).X).tolist() == [[True, False]]


def test_csv_header_must_match_schema():
    schema = default_schema()
    text = "a,b,label,flow_id\n1,2,0,x\n"

    with pytest.raises(SchemaMismatch):
        dataset_from_csv(text, schema)


def test_csv_ragged_row():
    with pytest.raises(SchemaMismatch):
        dataset_from_csv("a,b,label,flow_id\n1,0,x\n")


def test_read_csv_with_schema(tmp_path):
    schema = default_schema()
    ds = LabeledDataset(X=np.zeros((2, schema.dimension)),
                        y=np.array([0, 1]), feature_names=schema.names)
    path = tmp_path / "rows.csv"
    path.write_text(dataset_to_csv(ds))

    back = read_csv(path, schema)

    assert back.schema_version == schema.schema_version
    back.check_schema(schema)


# Splits

def test_kfold_sizes():
    folds = kfold_split(103, 10, seed=1)

    assert sorted(len(f) for f in folds) == [10] * 7 + [11] * 3
    assert sorted(np.concatenate(folds).tolist()) == list(range(103))


def test_kfold_is_seeded():
    a = kfold_split(50, 5, seed=7)
    b = kfold_split(50, 5, seed=7)
    c = kfold_split(50, 5, seed=8)

    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_stratified_kfold():
    labels = np.array([0] * 90 + [1] * 10)

    folds = kfold_split(100, 10, seed=0, labels=labels)

    for fold in folds:
        assert (labels[fold] == 0).sum() == 9
        assert (labels[fold] == 1).sum() == 1


def test_kfold_needs_enough_samples():
    with pytest.raises(TooFewSamples):
        kfold_split(5, 10)


def test_train_test_split_is_stratified():
    ds = datasets.blobs(90, 10)

    train, test = train_test_split(ds, 0.2, seed=0)

    assert test.class_counts == {0: 18, 1: 2}
    assert train.class_counts == {0: 72, 1: 8}
    assert not set(train.flow_ids) & set(test.flow_ids)


def test_make_imbalanced():
    ds = datasets.blobs(900, 100)

    imbalanced = make_imbalanced(ds, 0.0103, seed=0)

    assert imbalanced.class_counts == {0: 900, 1: 9}


# Scaling

def test_scaler_standardizes():
    ds = LabeledDataset(X=np.array([[1.0, 5.0], [3.0, 5.0]]),
                        y=np.array([0, 1]), feature_names=["a", "b"])

    scaler = fit_scaler(ds)
    Z = apply_scaler(scaler, ds.X)

    assert scaler.mean == [2.0, 5.0]
    assert Z.tolist() == [[-1.0, 0.0], [1.0, 0.0]]


# ADASYN

def test_synthetic_count():
    assert synthetic_count(10, 90) == 80
    assert synthetic_count(10, 90, beta=0.5) == 40
    assert synthetic_count(10, 90, target_share=0.5) == 80
    assert synthetic_count(90, 10) == 0


def _overlapping(seed=0):
    ds = datasets.blobs(90, 10, seed=seed, shift=1.0)
    flags = (np.arange(100) % 2).astype(float)[:, None]
    return LabeledDataset(X=np.hstack([ds.X, flags]), y=ds.y,
                          feature_names=ds.feature_names + ["flag"])


def test_adasyn_balances_and_keeps_originals():
    ds = _overlapping()

    out = adasyn(ds, k_neighbors=5, seed=0)

    assert out.X[:100].tolist() == ds.X.tolist()
    assert out.y[:100].tolist() == ds.y.tolist()
    assert set(out.y[100:].tolist()) == {1}
    assert abs(out.class_counts[1] - 90) <= 5
    assert out.flow_ids[100] == "adasyn#0"


def test_adasyn_samples_lie_between_minority_points():
    ds = _overlapping(seed=4)
    minority = ds.X[ds.y == 1]

    out = adasyn(ds, k_neighbors=5, seed=2)
    synthetic = out.X[len(ds):]

    assert len(synthetic) > 0
    assert np.all(synthetic >= minority.min(axis=0) - 1e-12)
    assert np.all(synthetic <= minority.max(axis=0) + 1e-12)
    assert set(synthetic[:, -1].tolist()) <= {0.0, 1.0}


def test_adasyn_is_seeded():
    ds = _overlapping()

    assert adasyn(ds, seed=3).X.tolist() == adasyn(ds, seed=3).X.tolist()


def test_binary_columns():
    X = np.array([[0.0, 0.5, 1.0], [1.0, 1.0, 1.0]])

    assert binary_columns(X).tolist() == [True, False, True]


def test_adasyn_needs_neighbours():
    ds = datasets.blobs(20, 4, shift=1.0)

    with pytest.raises(TooFewSamples):
        adasyn(ds, k_neighbors=5)


def test_adasyn_single_class():
    ds = datasets.blobs(20, 0)

    with pytest.raises(TooFewSamples):
        adasyn(ds)


def test_adasyn_separated_minority():
    ds = datasets.blobs(50, 10, shift=100.0)

    assert adasyn(ds, k_neighbors=3) is ds
    with pytest.raises(DegenerateMinority):
        adasyn(ds, k_neighbors=3, strict=True)
