import numpy as np
import pytest

from app.core.baselines import (
    MIN_GAIN,
    _augment,
    hinge_objective,
    predict_baseline,
    train_bp_mlp,
    train_decision_tree,
    train_svm_ovr,
    tree_depth,
)
from app.core.errors import DegenerateTarget
from app.core.features import apply_minmax, fit_minmax
from app.models.records import CLASS_VALUES
from conftest import random_dataset


def oracle_tree(X, y, depth, max_depth, min_leaf):
    """Plain-loop CART: every (feature, midpoint) pair, first strictly better split wins"""
    value = sum(y) / len(y)
    if depth >= max_depth or len(y) < 2 * min_leaf or len(set(y.tolist())) == 1:
        return value
    n, total = len(y), sum(y)
    best = None
    for j in range(X.shape[1]):
        values = sorted(set(X[:, j].tolist()))
        for a, b in zip(values, values[1:]):
            threshold = (a + b) / 2.0
            left = X[:, j] <= threshold
            n_left = int(left.sum())
            if n_left < min_leaf or n - n_left < min_leaf:
                continue
            s_left = sum(y[left])
            s_right = total - s_left
            gain = s_left * s_left / n_left + s_right * s_right / (n - n_left) - total * total / n
            if best is None or gain > best[0]:
                best = (gain, j, threshold)
    if best is None or best[0] <= MIN_GAIN:
        return value
    _, j, threshold = best
    left = X[:, j] <= threshold
    return (
        j,
        threshold,
        oracle_tree(X[left], y[left], depth + 1, max_depth, min_leaf),
        oracle_tree(X[~left], y[~left], depth + 1, max_depth, min_leaf),
    )


def oracle_predict(node, row):
    while isinstance(node, tuple):
        j, threshold, left, right = node
        node = left if row[j] <= threshold else right
    return node


@pytest.mark.parametrize("seed", range(20))
def test_tree_matches_exhaustive_search(seed):
    dataset = random_dataset(counts=(12, 10, 8), n_features=2, seed=seed, signal=seed % 2 == 0)
    model = train_decision_tree(dataset, max_depth=4, min_leaf=2)
    X = apply_minmax(dataset, model.normalization).flattened()
    oracle = oracle_tree(X, dataset.labels, 0, 4, 2)
    expected = [oracle_predict(oracle, row) for row in X]
    np.testing.assert_allclose(model.predict_scores(dataset), expected, rtol=0, atol=1e-12)
    assert tree_depth(model.root) <= 4


def test_depth_zero_tree_is_the_mean():
    dataset = random_dataset(counts=(6, 3, 1))
    model = train_decision_tree(dataset, max_depth=0)
    assert model.node_count == 1
    assert model.root.value == pytest.approx(np.mean(dataset.labels))


def test_tree_rejects_constant_target():
    dataset = random_dataset(counts=(0, 8, 0))
    with pytest.raises(DegenerateTarget):
        train_decision_tree(dataset)


def two_clusters(seed=0):
    return random_dataset(counts=(25, 0, 25), n_features=3, seed=seed)


def test_svm_separates_clusters():
    dataset = two_clusters()
    model = train_svm_ovr(dataset, lam=0.01, epochs=300, seed=1)
    predicted = model.predict_scores(dataset)
    assert np.mean(predicted == dataset.labels) >= 0.9


def test_svm_objective_trace_never_rises():
    dataset = random_dataset(counts=(20, 12, 8), seed=6)
    model = train_svm_ovr(dataset, lam=0.01, epochs=60)
    Xa = _augment(apply_minmax(dataset, model.normalization).X)
    for k, (c, history) in enumerate(zip(CLASS_VALUES, model.objective)):
        assert len(history) == 60
        assert all(b <= a for a, b in zip(history, history[1:]))
        # the kept weights are the ones the last entry was measured on
        y = np.where(dataset.labels == c, 1.0, -1.0)
        assert hinge_objective(model.weights[k], Xa, y, 0.01) == pytest.approx(history[-1], rel=1e-12)


def test_svm_bias_is_not_shrunk():
    dataset = random_dataset(counts=(30, 0, 6), n_features=2, seed=2)
    w = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -5.0])
    Xa = _augment(apply_minmax(dataset, fit_minmax(dataset)).X)
    y = np.where(dataset.labels == 0.5, 1.0, -1.0)
    # every margin is 5 and an unregularized bias adds nothing to the norm term
    assert hinge_objective(w, Xa, y, 0.3) == 0.0


def test_large_lambda_shrinks_weights():
    dataset = two_clusters(4)
    loose = train_svm_ovr(dataset, lam=0.01, epochs=50)
    tight = train_svm_ovr(dataset, lam=1000.0, epochs=50)
    assert np.abs(tight.weights[:, :-1]).max() < 0.01 * np.abs(loose.weights[:, :-1]).max()


def test_svm_is_deterministic():
    dataset = two_clusters(3)
    first = train_svm_ovr(dataset, epochs=5, seed=2)
    again = train_svm_ovr(dataset, epochs=5, seed=2)
    np.testing.assert_array_equal(first.weights, again.weights)


def test_svm_scores_and_objective_frame():
    dataset = random_dataset(counts=(10, 10, 10))
    model = train_svm_ovr(dataset, epochs=4, seed=0)
    scores = model.class_score_matrix(dataset)
    assert scores.shape == (30, 3)
    assert scores.min() == 0.0 and scores.max() == 1.0
    frame = model.objective_frame()
    assert list(frame.columns) == ["epoch", "objective_0.0", "objective_0.5", "objective_1.0"]
    assert frame["epoch"].tolist() == [1, 2, 3, 4]
    assert (frame.drop(columns="epoch") >= 0).all().all()


def test_mlp_is_seeded_and_learns():
    dataset = random_dataset(counts=(15, 15, 15), n_features=3, seed=5)
    model, trace = train_bp_mlp(dataset, learning_rate=0.05, momentum=0.9, epochs=60, seed=4, hidden_width=8)
    again, retrace = train_bp_mlp(dataset, learning_rate=0.05, momentum=0.9, epochs=60, seed=4, hidden_width=8)
    assert trace.train_mse == retrace.train_mse
    assert trace.train_mse[-1] < trace.train_mse[0]
    np.testing.assert_array_equal(model.predict_scores(dataset), again.predict_scores(dataset))


def test_single_window_prediction_matches_batch():
    dataset = random_dataset(counts=(8, 8, 8))
    model = train_decision_tree(dataset, max_depth=3, min_leaf=2)
    scaled = model.scaled(dataset)
    batch = model.predict_matrix(scaled)
    assert [predict_baseline(model, w) for w in scaled[:5]] == batch[:5].tolist()
