import logging

import numpy as np
import pytest

from tlsxplain.errors import (
    DimensionMismatch,
    EmptyData,
    NonBinaryLabel,
    SingleClass,
)
from tlsxplain.model import (
    LEAF,
    TreeEnsemble,
    bootstrap_counts,
    default_params,
    dump_ensemble,
    from_file,
    load_ensemble,
    log_loss,
    model_output,
    predict,
    predict_batch,
    resolve_max_features,
    save_ensemble,
    to_file,
    train,
    train_boosted,
    train_cart,
)
from tlsxplain.schemas import HyperParams
from tlsxplain.types import ModelKind

from .examples import datasets, ensembles


def _accuracy(model, ds):
    return float(np.mean(predict_batch(model, ds.X)[2] == ds.y))


def test_stump_routes_left_on_equal():
    tree = ensembles.stump(0, 0.5, -1.0, 2.0)

    assert tree.apply(np.array([[0.5], [0.6]])).tolist() == [1, 2]
    assert tree.leaf_index(np.array([0.4])) == 1
    assert tree.depth == 1
    assert tree.used_features == [0]


def test_default_params():
    rf = default_params(ModelKind.FOREST)
    xgb = default_params(ModelKind.BOOSTED)
    extra = default_params(ModelKind.EXTRA)

    assert (rf.n_estimators, rf.max_depth, rf.min_samples_split,
            rf.min_samples_leaf, rf.max_features, rf.bootstrap) == \
        (23, 42, 6, 2, "sqrt", True)
    assert (xgb.n_estimators, xgb.max_depth, xgb.learning_rate,
            xgb.min_child_weight, xgb.gamma, xgb.subsample) == \
        (23, 43, 0.47, 0.4, 3.28, 0.82)
    assert xgb.max_features is None
    assert (extra.n_estimators, extra.max_depth, extra.bootstrap) == \
        (100, None, False)


def test_resolve_max_features():
    assert resolve_max_features(None, 163) == 163
    assert resolve_max_features("sqrt", 163) == 12
    assert resolve_max_features(0.5, 10) == 5
    assert resolve_max_features(0.01, 10) == 1


def test_cart_fits_xor_exactly():
    ds = datasets.xor(200, seed=1)

    tree = train_cart(ds.X, ds.y, HyperParams(max_features=None))

    assert tree.predict(ds.X).tolist() == ds.y.astype(float).tolist()


def test_trees_are_preorder_with_additive_covers():
    ds = datasets.blobs(60, 40, seed=2, shift=1.0)

    model = train(ModelKind.FOREST, ds.X, ds.y)

    for tree in model.trees:
        for node in range(tree.n_nodes):
            if tree.is_leaf(node):
                assert tree.children_right[node] == LEAF
                continue
            left, right = tree.children_left[node], tree.children_right[node]
            assert left > node and right > node
            assert tree.covers[node] == pytest.approx(
                tree.covers[left] + tree.covers[right]
            )
            assert tree.covers[node] > 0


def test_min_samples_leaf_is_respected():
    ds = datasets.blobs(60, 40, seed=3, shift=1.0)
    params = default_params(ModelKind.FOREST).with_overrides(
        bootstrap=False, n_estimators=3
    )

    model = train(ModelKind.FOREST, ds.X, ds.y, params)

    for tree in model.trees:
        leaves = tree.apply(ds.X)
        assert all(np.sum(leaves == leaf) >= 2 for leaf in set(leaves))


def test_min_samples_leaf_counts_rows_not_draws():
    X = np.array([[0.0], [1.0], [2.0]])
    params = HyperParams(min_samples_leaf=2)

    tree = train_cart(X, [1, 0, 0], params, weights=np.array([3.0, 1, 1]))

    assert tree.n_nodes == 1
    assert tree.values[0] == pytest.approx(0.6)


def test_bootstrapped_leaves_hold_distinct_rows():
    ds = datasets.blobs(60, 40, seed=3, shift=1.0)
    params = default_params(ModelKind.FOREST).with_overrides(
        n_estimators=3, seed=5
    )

    model = train(ModelKind.FOREST, ds.X, ds.y, params)

    for t, tree in enumerate(model.trees):
        in_bag = bootstrap_counts(len(ds), params.seed, t) > 0
        leaves = tree.apply(ds.X[in_bag])
        assert all(np.sum(leaves == leaf) >= 2 for leaf in set(leaves))


@pytest.mark.parametrize("kind", [ModelKind.FOREST, ModelKind.EXTRA])
def test_averaging_leaves_are_probabilities(kind):
    ds = datasets.blobs(40, 40, seed=8, shift=1.0)
    params = default_params(kind).with_overrides(n_estimators=4)

    model = train(kind, ds.X, ds.y, params)

    for tree in model.trees:
        leaf = tree.children_left == -1
        assert np.all((tree.values[leaf] >= 0) & (tree.values[leaf] <= 1))


def test_forest_prediction_is_weighted_label_average():
    ds = datasets.blobs(70, 30, seed=4, shift=1.5)
    params = default_params(ModelKind.FOREST).with_overrides(
        n_estimators=7, seed=11
    )
    model = train(ModelKind.FOREST, ds.X, ds.y, params)
    queries = datasets.blobs(10, 10, seed=5, shift=1.5).X

    for x in queries:
        expected = 0.0
        for t, tree in enumerate(model.trees):
            w = bootstrap_counts(len(ds), params.seed, t)
            same = tree.apply(ds.X) == tree.leaf_index(x)
            expected += np.sum(w[same] * ds.y[same]) / np.sum(w[same])
        expected /= len(model.trees)
        assert model_output(model, x)[0] == pytest.approx(expected,
                                                          abs=1e-12)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_each_kind_separates_blobs(kind):
    train_ds = datasets.blobs(150, 150, seed=6)
    test_ds = datasets.blobs(50, 50, seed=7)

    model = train(kind, train_ds.X, train_ds.y)

    assert model.kind is kind
    assert _accuracy(model, test_ds) >= 0.95


def test_boosting_loss_is_monotone():
    ds = datasets.blobs(100, 100, seed=8, shift=1.0)
    params = default_params(ModelKind.BOOSTED).with_overrides(subsample=1.0)

    model = train_boosted(ds.X, ds.y, params)

    assert len(model.train_loss) == 23
    assert all(b <= a + 1e-12 for a, b in zip(model.train_loss,
                                               model.train_loss[1:]))
    margins = model_output(model, ds.X)
    assert model.train_loss[-1] == pytest.approx(log_loss(ds.y, margins))


def test_boosted_base_score_is_prior_log_odds():
    ds = datasets.blobs(75, 25, seed=9)

    model = train_boosted(ds.X, ds.y)

    assert model.base_score == pytest.approx(np.log(25 / 75))


def test_boosting_single_class(caplog):
    ds = datasets.blobs(10, 0)

    with caplog.at_level(logging.WARNING):
        model = train_boosted(ds.X, ds.y)

    assert model.trees == []
    assert "constant model" in caplog.text
    with pytest.raises(SingleClass):
        train_boosted(ds.X, ds.y, strict=True)


def test_training_is_seeded():
    ds = datasets.blobs(50, 50, seed=10, shift=1.0)

    a = train(ModelKind.FOREST, ds.X, ds.y)
    b = train(ModelKind.FOREST, ds.X, ds.y)

    assert dump_ensemble(a) == dump_ensemble(b)


def test_parallel_training_matches_serial():
    ds = datasets.blobs(40, 40, seed=12, shift=1.0)
    params = default_params(ModelKind.EXTRA).with_overrides(n_estimators=6)

    serial = train(ModelKind.EXTRA, ds.X, ds.y, params, jobs=1)
    parallel = train(ModelKind.EXTRA, ds.X, ds.y, params, jobs=2)

    assert dump_ensemble(serial) == dump_ensemble(parallel)


def test_training_input_checks():
    X = np.zeros((4, 2))

    with pytest.raises(NonBinaryLabel):
        train(ModelKind.FOREST, X, np.array([0, 1, 2, 1]))
    with pytest.raises(DimensionMismatch):
        train(ModelKind.FOREST, X, np.array([0, 1]))
    with pytest.raises(EmptyData):
        train(ModelKind.FOREST, np.zeros((0, 2)), np.array([]))


def test_prediction_checks_width():
    ds = datasets.blobs(20, 20)
    model = train(ModelKind.BOOSTED, ds.X, ds.y)

    with pytest.raises(DimensionMismatch):
        predict(model, np.zeros(3))
    with pytest.raises(DimensionMismatch):
        predict_batch(model, np.zeros((2, 5)))


def test_predict_single_sample():
    ds = datasets.blobs(40, 40, seed=13)
    model = train(ModelKind.BOOSTED, ds.X, ds.y)

    prediction = predict(model, ds.X[-1])

    margin, probability, labels = predict_batch(model, ds.X[-1:])
    assert prediction.margin == pytest.approx(margin[0])
    assert prediction.probability == pytest.approx(probability[0])
    assert prediction.label == labels[0] == 1


def test_ensemble_rejects_out_of_range_feature():
    with pytest.raises(DimensionMismatch):
        TreeEnsemble(kind=ModelKind.BOOSTED,
                     trees=[ensembles.stump(3, 0.0, 0.0, 1.0)],
                     base_score=0.0, feature_count=2)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_save_and_load(tmp_path, kind):
    ds = datasets.blobs(30, 30, seed=14, shift=1.0)
    params = default_params(kind).with_overrides(n_estimators=5)
    model = train(kind, ds.X, ds.y, params, schema_version="tlsx-1-test",
                  feature_names=ds.feature_names)
    path = tmp_path / "model.json"

    save_ensemble(model, path)
    loaded = load_ensemble(path)

    assert loaded.kind is kind
    assert loaded.schema_version == "tlsx-1-test"
    assert loaded.feature_names == ds.feature_names
    assert loaded.params == model.params
    assert model_output(loaded, ds.X).tolist() == \
        model_output(model, ds.X).tolist()
    assert dump_ensemble(loaded) == dump_ensemble(model)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_params_survive_json(kind):
    params = default_params(kind)

    assert HyperParams.parse_raw(params.json()) == params


def test_reloaded_boosted_model_still_uses_every_feature(tmp_path):
    ds = datasets.blobs(30, 30, seed=15, shift=1.0)
    params = default_params(ModelKind.BOOSTED).with_overrides(n_estimators=3)
    path = tmp_path / "model.json"
    save_ensemble(train(ModelKind.BOOSTED, ds.X, ds.y, params), path)

    loaded = load_ensemble(path).params

    assert loaded.max_features is None
    retrained = train(ModelKind.BOOSTED, ds.X, ds.y, loaded)
    assert model_output(retrained, ds.X).tolist() == \
        model_output(load_ensemble(path), ds.X).tolist()


def test_malformed_node_link_is_rejected():
    model = TreeEnsemble(kind=ModelKind.BOOSTED,
                         trees=[ensembles.stump(0, 0.0, -1.0, 1.0)],
                         base_score=0.0, feature_count=1)
    record = to_file(model)
    # right child points back at the root
    record.trees[0].nodes[0].right = 0

    with pytest.raises(DimensionMismatch):
        from_file(record)
