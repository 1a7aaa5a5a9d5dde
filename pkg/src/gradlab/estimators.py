"""scikit-learn compatible wrappers around the training and Newton routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autodiff as ad
from .layers import ModelSpec
from .ndcore import RngState
from .stonewton import NeumannConfig, stochastic_newton_step
from .trainkit import Dataset, EarlyStopConfig, MLPModel, TrainConfig, grad_of_mean, train

__all__ = ["MLPRegressorSGD", "MLPClassifierSGD", "StochasticNewtonLogisticRegression"]


class _MLPBase(BaseEstimator):
    _loss = "squared"
    _output_kind = "linear"

    def __init__(self, hidden_layer_sizes=(16,), activation="tanh", eta=0.05, batch_size=16,
                 max_epochs=100, clip_threshold=None, dropout_prob=0.0, patience=None,
                 validation_fraction=0.2, seed=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.eta = eta
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.clip_threshold = clip_threshold
        self.dropout_prob = dropout_prob
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _fit(self, X, y):
        n, d = X.shape
        spec = ModelSpec((d, *self.hidden_layer_sizes, 1), self.activation,
                         dropout_prob=self.dropout_prob, output_kind=self._output_kind)
        self.model_ = MLPModel(spec, self._loss)
        early = None
        n_val = int(round(self.validation_fraction * n)) if self.patience is not None else 0
        if self.patience is not None:
            if not 1 <= n_val < n:
                raise ValueError(f"validation_fraction={self.validation_fraction} leaves no train or val rows")
            early = EarlyStopConfig(patience=self.patience)
        train_set = Dataset(X[: n - n_val], y[: n - n_val])
        val_set = Dataset(X[n - n_val :], y[n - n_val :]) if n_val else train_set
        cfg = TrainConfig(eta=self.eta, batch_size=min(self.batch_size, len(train_set)),
                          max_epochs=self.max_epochs, seed=self.seed,
                          clip_threshold=self.clip_threshold, early_stop=early)
        result = train(self.model_, train_set, val_set, cfg)
        self.params_ = result.params
        self.history_ = result.history
        self.n_features_in_ = d
        return self

    def _raw(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.model_.predict(self.params_, X)[:, 0]


class MLPRegressorSGD(RegressorMixin, _MLPBase):
    """Multi-layer perceptron trained with minibatch SGD on squared error."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        return self._fit(X, y)

    def predict(self, X):
        return self._raw(X)


class MLPClassifierSGD(ClassifierMixin, _MLPBase):
    """Binary MLP classifier (sigmoid output, cross-entropy loss)."""

    _loss = "bce"
    _output_kind = "sigmoid"

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError(f"binary classification only, got {len(self.classes_)} classes")
        return self._fit(X, encoded.astype(np.float64))

    def predict_proba(self, X):
        p = self._raw(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        positive = self._raw(X) > 0.5
        return self.classes_[positive.astype(int)]


class StochasticNewtonLogisticRegression(ClassifierMixin, BaseEstimator):
    """Binary logistic regression fitted by stochastic Newton steps.

    Each step multiplies a gradient by a randomly truncated Neumann-series
    estimate of the (damped) inverse Hessian. ``batch_size`` and
    ``hvp_batch_size`` default to the full dataset; with a small gradient
    batch and ``alpha=1`` the iterates stall at the gradient-noise level.
    """

    def __init__(self, alpha=1.0, batch_size=None, hvp_batch_size=None, damping=1e-3, repeats=10,
                 scale_margin=0.25, max_iter=100, tol=1e-3, seed=0):
        self.alpha = alpha
        self.batch_size = batch_size
        self.hvp_batch_size = hvp_batch_size
        self.damping = damping
        self.repeats = repeats
        self.scale_margin = scale_margin
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError(f"binary classification only, got {len(self.classes_)} classes")
        n, d = X.shape
        data = Dataset(X, encoded.astype(np.float64))
        model = MLPModel(ModelSpec((d, 1), output_kind="sigmoid"), "bce")
        cfg = NeumannConfig(damping=self.damping, repeats=self.repeats, scale_margin=self.scale_margin)
        params = {"W0": np.zeros((1, d)), "b0": np.zeros(1)}
        rng = RngState(self.seed)
        b = n if self.batch_size is None else min(self.batch_size, n)
        hb = n if self.hvp_batch_size is None else min(self.hvp_batch_size, n)
        self.n_iter_ = 0
        for _ in range(self.max_iter):
            params, rng = stochastic_newton_step(model, params, data, cfg, self.alpha, rng,
                                                 batch_size=b, hvp_batch_size=hb)
            self.n_iter_ += 1
            if np.linalg.norm(ad.ravel(grad_of_mean(model, params, data))) < self.tol:
                break
        self.model_ = model
        self.params_ = params
        self.coef_ = params["W0"].copy()
        self.intercept_ = params["b0"].copy()
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_[0] + self.intercept_[0]

    def predict_proba(self, X):
        z = self.decision_function(X)
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        positive = self.decision_function(X) > 0
        return self.classes_[positive.astype(int)]
