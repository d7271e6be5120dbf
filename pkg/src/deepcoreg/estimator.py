"""Scikit-learn style estimator wrapping model construction, training and
posterior prediction, so the method composes with the wider ecosystem
(`get_params`/`set_params`, cloning, pipelines operating on coordinates).
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .model import DncModel, SpatialDataset
from .posterior import predict as posterior_predict
from .training import TrainConfig, fit as train_fit

__all__ = ["DncRegressor"]


def _check_locations(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[1] != 2:
        raise ValueError(f"locations must be (n, 2), got {S.shape}")
    if not np.isfinite(S).all():
        raise ValueError("locations contain non-finite values")
    return S


def _check_outcomes(y, n):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] != n:
        raise ValueError(f"outcomes must be (n, J) with n={n}, got {y.shape}")
    if not np.isfinite(y).all():
        raise ValueError("outcomes contain non-finite values")
    return y


def _check_designs(X, n, J):
    if X is None:
        return np.zeros((n, J, 0))
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:  # shared covariates: replicate the row across outcomes
        X = np.repeat(X[:, None, :], J, axis=1)
    if X.ndim != 3 or X.shape[:2] != (n, J):
        raise ValueError(f"designs must be (n, J, p) with n={n}, J={J}, got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("designs contain non-finite values")
    return X


class DncRegressor(BaseEstimator, RegressorMixin):
    """Multivariate spatial regression with neural coregionalization.

    The estimator's features are planar coordinates in the unit square; the
    targets are the J outcomes observed at each coordinate. Optional design
    matrices add a linear regression mean. Fitting trains the factor and
    loading networks by penalized mini-batch gradient descent with dropout;
    prediction runs Monte Carlo dropout forward passes and summarizes them
    into Gaussian predictive means, intervals and outcome cross-correlations.

    Parameters
    ----------
    hidden_layers : tuple of int
        Hidden widths shared by every factor and loading network.
    keep_prob : float
        Dropout keep probability for all networks (training and posterior
        sampling use the same unscaled Bernoulli masks).
    lambda_w, lambda_b : float
        L2 penalties on weights and biases.
    learning_rate, batch_size, max_epochs, patience, optimizer : training
        configuration; ``optimizer`` is ``"adam"`` or ``"sgd"``.
    n_draws : int
        Monte Carlo dropout draws used by :meth:`predict`.
    validation_fraction : float
        Fraction of the training data held out for early stopping when no
        explicit validation set is passed to :meth:`fit`.
    random_state : int
        Seed for initialization, batching, dropout and posterior sampling.
    """

    def __init__(self, hidden_layers=(64, 64), keep_prob=0.95,
                 lambda_w=1e-4, lambda_b=1e-4, learning_rate=1e-2,
                 batch_size=64, max_epochs=1000, patience=150,
                 optimizer="adam", n_draws=200, validation_fraction=0.25,
                 random_state=0):
        self.hidden_layers = hidden_layers
        self.keep_prob = keep_prob
        self.lambda_w = lambda_w
        self.lambda_b = lambda_b
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.optimizer = optimizer
        self.n_draws = n_draws
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience,
            optimizer=self.optimizer, seed=self.random_state,
            keep_prob_h=self.keep_prob, keep_prob_psi=self.keep_prob,
            lambda_w=self.lambda_w, lambda_b=self.lambda_b,
        )

    def fit(self, S, y, X=None, validation_data=None):
        """Fit on locations ``S`` (n, 2) and outcomes ``y`` (n, J).

        ``X`` may be ``(n, p)`` shared covariates or ``(n, J, p)`` design
        matrices. ``validation_data`` is an optional ``(S, y)`` or
        ``(S, y, X)`` tuple; without it, a random ``validation_fraction`` of
        the rows is held out for early stopping.
        """
        S = _check_locations(S)
        y = _check_outcomes(y, S.shape[0])
        J = y.shape[1]
        X = _check_designs(X, S.shape[0], J)

        if validation_data is not None:
            vs = _check_locations(validation_data[0])
            vy = _check_outcomes(validation_data[1], vs.shape[0])
            vx = _check_designs(
                validation_data[2] if len(validation_data) > 2 else None,
                vs.shape[0], J,
            )
            train = SpatialDataset(S, X, y)
            val = SpatialDataset(vs, vx, vy)
        else:
            if not 0.0 < self.validation_fraction < 1.0:
                raise ValueError("validation_fraction must lie in (0, 1)")
            rng = np.random.default_rng(self.random_state)
            order = rng.permutation(S.shape[0])
            n_val = max(1, int(round(self.validation_fraction * S.shape[0])))
            if n_val >= S.shape[0]:
                raise ValueError("validation split leaves no training data")
            va, tr = order[:n_val], order[n_val:]
            train = SpatialDataset(S[tr], X[tr], y[tr])
            val = SpatialDataset(S[va], X[va], y[va])

        rng = np.random.default_rng(self.random_state)
        model = DncModel.initialize(
            J, X.shape[2], hidden=tuple(self.hidden_layers),
            keep_prob_h=self.keep_prob, keep_prob_psi=self.keep_prob,
            lambda_w=self.lambda_w, lambda_b=self.lambda_b, rng=rng,
        )
        self.model_, self.report_ = train_fit(model, train, val, self._config())
        self.n_outcomes_ = J
        self.n_covariates_ = X.shape[2]
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")

    def predict(self, S, X=None, return_summary=False):
        """Posterior predictive means at the locations (n, J).

        With ``return_summary=True`` the full per-location summary (means,
        covariances, 95% bounds, cross-correlations) is returned instead.
        """
        self._require_fitted()
        S = _check_locations(S)
        X = _check_designs(X, S.shape[0], self.n_outcomes_)
        if X.shape[2] != self.n_covariates_:
            raise ValueError(
                f"expected p={self.n_covariates_} covariates, got {X.shape[2]}"
            )
        summary = posterior_predict(
            self.model_, S, X, M=self.n_draws, seed=self.random_state,
        )
        return summary if return_summary else summary.mu_y

    def sample(self, S, n_draws=None):
        """Raw Monte Carlo draws of the spatial effect, shape (M, n, J)."""
        from .posterior import draw_posterior

        self._require_fitted()
        S = _check_locations(S)
        M = self.n_draws if n_draws is None else n_draws
        return draw_posterior(self.model_, S, M, self.random_state).w
