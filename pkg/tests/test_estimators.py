"""Sklearn API conformance and predictive behavior of the estimators."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import clone

from fedrec import data
from fedrec.estimators import (
    AutoEncoderRecommender,
    FederatedRecommender,
    as_rating_matrix,
)


def dense_ratings(seed=0, users=40, items=15, sparsity=0.7):
    matrix = data.gen_synthetic(users, items, sparsity=sparsity, seed=seed)
    train, test = data.split(matrix, data.SplitSpec(0.8, seed=seed))
    X = np.zeros((users, items))
    X[train.user_idx, train.item_idx] = train.values
    Y = np.zeros((users, items))
    Y[test.user_idx, test.item_idx] = test.values
    return X, Y


def test_as_rating_matrix_dense_and_sparse():
    X = np.array([[5.0, 0.0, 3.0], [0.0, 1.0, 0.0]])
    m = as_rating_matrix(X)
    assert m.num_entries == 3
    m2 = as_rating_matrix(sp.csr_matrix(X))
    np.testing.assert_array_equal(m.values, m2.values)
    assert as_rating_matrix(m) is m


def test_get_params_set_params_clone():
    est = AutoEncoderRecommender(epochs=5, batch_size=16, seed=3, hidden=(8, 4))
    params = est.get_params()
    assert params["epochs"] == 5 and params["hidden"] == (8, 4)
    est.set_params(epochs=7)
    assert est.epochs == 7
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()

    fest = FederatedRecommender(algorithm="fedavg", num_clients=4, rounds=3)
    assert clone(fest).get_params() == fest.get_params()


def test_autoencoder_fit_predict_deterministic():
    X, Y = dense_ratings()
    est1 = AutoEncoderRecommender(epochs=10, batch_size=10, seed=5, hidden=(8, 4))
    est2 = AutoEncoderRecommender(epochs=10, batch_size=10, seed=5, hidden=(8, 4))
    p1 = est1.fit(X).predict(X)
    p2 = est2.fit(X).predict(X)
    np.testing.assert_array_equal(p1, p2)
    assert p1.shape == X.shape


def test_autoencoder_beats_constant_predictor():
    X, Y = dense_ratings(seed=2, users=120, items=20, sparsity=0.5)
    est = AutoEncoderRecommender(epochs=60, batch_size=10, seed=1, hidden=(16, 8))
    est.fit(X)
    score = est.score(X, Y)  # negative RMSE
    train_mean = X[X > 0].mean()
    users, items = np.nonzero(Y)
    baseline = -np.sqrt(np.mean((train_mean - Y[users, items]) ** 2))
    assert score > baseline


def test_predict_input_validation():
    X, _ = dense_ratings()
    est = AutoEncoderRecommender(epochs=2, batch_size=10, seed=0, hidden=(6, 3))
    est.fit(X)
    with pytest.raises(ValueError, match="items"):
        est.predict(X[:, :5])


def test_federated_fit_predict_routes_users():
    X, Y = dense_ratings(seed=3)
    est = FederatedRecommender(
        algorithm="personalfr", num_clients=4, participation=1.0, rounds=4,
        local_epochs=1, batch_size=8, seed=2, hidden=(8, 4),
    )
    est.fit(X)
    full = est.predict(X)
    assert full.shape == X.shape
    subset_users = np.array([3, 7])
    sub = est.predict(X[subset_users], users=subset_users)
    # chunked matmuls may reassociate; agreement is to float precision
    np.testing.assert_allclose(sub, full[subset_users], atol=1e-12)
    with pytest.raises(ValueError, match="align"):
        est.predict(X[:5])


def test_federated_implicit_score_is_ndcg():
    matrix = data.gen_synthetic(30, 12, sparsity=0.6, seed=4)
    implicit = data.binarize(matrix, 3.5)
    train, test = data.split(implicit, data.SplitSpec(0.8, seed=4))
    est = FederatedRecommender(
        algorithm="fedavg", num_clients=3, participation=1.0, rounds=3,
        local_epochs=1, batch_size=8, seed=0, hidden=(8, 4), feedback="implicit",
    )
    est.fit(train)
    X_rows = train.dense_rows(np.arange(train.num_users))
    value = est.score(X_rows, test)
    assert 0.0 <= value <= 1.0
