"""Scikit-learn style estimators wrapping the training runners.

Both estimators accept a :class:`~fedrec.data.RatingMatrix`, a dense array or
a scipy sparse matrix with zeros at unrated positions, follow the sklearn
parameter conventions (constructor stores hyperparameters verbatim, fitted
attributes carry a trailing underscore) and therefore compose with
``clone``/``get_params`` based tooling.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils import check_array

from . import metrics, nn
from .data import RatingMatrix
from .federation import FederationConfig, make_trainer


def as_rating_matrix(
    X,
    implicit: bool = False,
    rating_scale: tuple[float, float] | None = (1.0, 5.0),
) -> RatingMatrix:
    """Coerce user-by-item input into a RatingMatrix.

    Dense and sparse inputs treat a stored/explicit zero as "unrated"; pass a
    RatingMatrix directly to represent rated negatives in implicit mode.
    """
    if isinstance(X, RatingMatrix):
        return X
    if sp.issparse(X):
        coo = X.tocoo()
        keep = coo.data != 0
        return RatingMatrix.from_entries(
            X.shape[0], X.shape[1],
            coo.row[keep], coo.col[keep], coo.data[keep],
            rating_scale=None if implicit else rating_scale,
            implicit=implicit,
        )
    X = check_array(X, dtype=np.float64)
    users, items = np.nonzero(X)
    return RatingMatrix.from_entries(
        X.shape[0], X.shape[1], users, items, X[users, items],
        rating_scale=None if implicit else rating_scale,
        implicit=implicit,
    )


class _RecommenderMixin:
    def _validate_predict_input(self, X) -> np.ndarray:
        X = check_array(X, accept_sparse=False, dtype=np.float64)
        if X.shape[1] != self.n_items_:
            raise ValueError(
                f"X has {X.shape[1]} items, model was fit with {self.n_items_}"
            )
        return X

    def score(self, X, y=None):
        """Negative RMSE (explicit) or mean NDCG (implicit) on held-out ratings.

        ``X`` holds the input rows fed to the model (typically the training
        ratings) and ``y`` the held-out ratings to score against, aligned row
        by row.  Higher is better, per sklearn convention.
        """
        if y is None:
            raise ValueError("score requires held-out ratings as y")
        held_out = as_rating_matrix(
            y, implicit=self.feedback == "implicit", rating_scale=self._scale()
        )
        preds = self.predict(X)
        if self.feedback == "implicit":
            pairs = []
            for u in range(held_out.num_users):
                items = held_out.per_user_rated[u]
                if len(items):
                    pairs.append((preds[u, items], held_out.per_user_values[u]))
            return metrics.ndcg(pairs)
        users, items = held_out.user_idx, held_out.item_idx
        return -metrics.rmse(preds[users, items], held_out.values, clamp=self._scale())

    def _scale(self):
        return None if self.feedback == "implicit" else self.rating_scale


class AutoEncoderRecommender(BaseEstimator, _RecommenderMixin):
    """Centrally trained autoencoder for rating reconstruction.

    fit(X) learns to reconstruct the rated entries of X; predict(X) returns a
    dense score row per input row.
    """

    def __init__(self, feedback="explicit", epochs=100, batch_size=100,
                 optimizer="adam", learning_rate=1e-3, momentum=0.9,
                 weight_decay=5e-4, hidden=(256, 128), seed=0,
                 rating_scale=(1.0, 5.0)):
        self.feedback = feedback
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.hidden = hidden
        self.seed = seed
        self.rating_scale = rating_scale

    def _config(self, rounds: int) -> FederationConfig:
        return FederationConfig(
            algorithm="joint", T=rounds, B=self.batch_size,
            optimizer=self.optimizer, learning_rate=self.learning_rate,
            momentum=self.momentum, weight_decay=self.weight_decay,
            feedback=self.feedback, seed=self.seed, hidden=tuple(self.hidden),
            eval_every=max(rounds, 1),
        )

    def fit(self, X, y=None):
        train = as_rating_matrix(
            X, implicit=self.feedback == "implicit", rating_scale=self._scale()
        )
        trainer = make_trainer(train, None, self._config(self.epochs))
        result = trainer.run()
        self.model_ = result.model
        self.reports_ = result.reports
        self.n_items_ = train.num_items
        return self

    def predict(self, X):
        X = self._validate_predict_input(X)
        return nn.predict(self.model_, X)


class FederatedRecommender(BaseEstimator, _RecommenderMixin):
    """Federated autoencoder recommender (whole-model or partially federated).

    With ``algorithm="personalfr"`` each simulated client keeps a private
    encoder, so predictions route every row through the encoder of the client
    owning that training user; rows of ``X`` passed to predict must therefore
    correspond to training users (pass ``users`` to select a subset).
    """

    def __init__(self, algorithm="personalfr", num_clients=10, participation=0.1,
                 rounds=50, local_epochs=5, batch_size=10, pc=True,
                 optimizer="sgd", learning_rate=0.1, momentum=0.9,
                 weight_decay=5e-4, hidden=(256, 128), seed=0,
                 feedback="explicit", rating_scale=(1.0, 5.0)):
        self.algorithm = algorithm
        self.num_clients = num_clients
        self.participation = participation
        self.rounds = rounds
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.pc = pc
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.hidden = hidden
        self.seed = seed
        self.feedback = feedback
        self.rating_scale = rating_scale

    def fit(self, X, y=None):
        train = as_rating_matrix(
            X, implicit=self.feedback == "implicit", rating_scale=self._scale()
        )
        cfg = FederationConfig(
            algorithm=self.algorithm, M=self.num_clients, C=self.participation,
            K=self.local_epochs, T=self.rounds, B=self.batch_size,
            pc_enabled=self.pc, optimizer=self.optimizer,
            learning_rate=self.learning_rate, momentum=self.momentum,
            weight_decay=self.weight_decay, feedback=self.feedback,
            seed=self.seed, hidden=tuple(self.hidden),
            eval_every=max(self.rounds, 1),
        )
        trainer = make_trainer(train, None, cfg)
        self._trainer = trainer
        result = trainer.run()
        self.result_ = result
        self.n_items_ = train.num_items
        self.n_users_ = train.num_users
        return self

    def predict(self, X, users=None):
        X = self._validate_predict_input(X)
        if users is None:
            if X.shape[0] != self.n_users_:
                raise ValueError(
                    "X rows must align with training users; pass users= for a subset"
                )
            users = np.arange(self.n_users_)
        else:
            users = np.asarray(users, dtype=np.int64)
            if users.shape[0] != X.shape[0]:
                raise ValueError("users must align with the rows of X")
        return self._trainer._predict_rows(users, X)
