"""Dropout-based posterior sampling and Gaussian predictive summaries.

Each posterior draw applies one independently sampled mask set per network
to the trained parameters (zeroing dropped rows) and forward-propagates all
requested locations through the masked networks, so a single parameter draw
is shared across locations and the sampled spatial surfaces stay coherent.
Draw ``m`` uses an RNG stream derived from ``(seed, m)``, making draws
reproducible and independent of evaluation order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DncModel, upper_triangle_positions
from .networks import ShapeError, apply_mask_to_params, forward, sample_masks

__all__ = [
    "PosteriorDraws",
    "PredictiveSummary",
    "UndefinedCorrelationError",
    "draw_posterior",
    "summarize",
    "predict",
    "cross_correlation",
    "true_cross_correlation",
    "Z95",
]

Z95 = 1.959963984540054  # standard normal 97.5% quantile


class UndefinedCorrelationError(ValueError):
    """Correlation requested for a covariance with a zero diagonal entry."""


@dataclass
class PosteriorDraws:
    """Spatial-effect samples w^(m)(s) with shape (M, n_locations, J)."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 3:
            raise ShapeError(f"draws must be (M, n, J), got {self.w.shape}")
        if not np.isfinite(self.w).all():
            raise ValueError("non-finite posterior draws")

    @property
    def n_draws(self):
        return self.w.shape[0]


@dataclass
class PredictiveSummary:
    """Per-location Gaussian predictive summaries.

    mu_w, mu_y : (n, J) posterior means of the spatial effect and outcome
    Sigma_w, Sigma_y : (n, J, J) covariances; Sigma_y = Sigma_w + sigma2 * I
    lower, upper : (n, J) central 95% predictive bounds per outcome
    rho : (n, J, J) outcome cross-correlation implied by Sigma_y
    """

    mu_w: np.ndarray
    Sigma_w: np.ndarray
    mu_y: np.ndarray
    Sigma_y: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rho: np.ndarray


def draw_posterior(model: DncModel, locations, M: int, seed: int) -> PosteriorDraws:
    """M stochastic forward passes of w(s) = Psi(s) h(s) at the locations.

    For each draw, fresh Bernoulli mask sets are sampled for every factor
    and loading network at the model's training keep probabilities, the
    masked parameters are formed, and all locations are propagated through
    the masked networks.
    """
    if M < 1:
        raise ValueError("at least one draw required")
    S = np.atleast_2d(np.asarray(locations, dtype=float))
    n = S.shape[0]
    J = model.J
    positions = model.positions
    out = np.empty((M, n, J))
    for m in range(M):
        rng = np.random.default_rng([int(seed), m])
        h = np.empty((n, J))
        for j, net in enumerate(model.factor_nets):
            masked = apply_mask_to_params(net, sample_masks(net, model.keep_prob_h, rng))
            h[:, j] = forward(masked, S)[0][:, 0]
        Psi = np.zeros((n, J, J))
        for o, (k, j) in enumerate(positions):
            net = model.loading_nets[o]
            masked = apply_mask_to_params(net, sample_masks(net, model.keep_prob_psi, rng))
            Psi[:, k, j] = forward(masked, S)[0][:, 0]
        out[m] = np.einsum("nkj,nj->nk", Psi, h)
    return PosteriorDraws(out)


def summarize(draws: PosteriorDraws, model: DncModel, designs) -> PredictiveSummary:
    """Moment summaries of the draws and the Gaussian predictive intervals.

    The covariance uses the population normalization 1/M (not 1/(M-1)), so
    it is biased low by a factor (M-1)/M.
    """
    if draws.n_draws < 2:
        raise ValueError("covariance estimation needs at least two draws")
    w = draws.w
    M, n, J = w.shape
    X = np.asarray(designs, dtype=float)
    if X.shape != (n, J, model.p):
        raise ShapeError(f"designs must be {(n, J, model.p)}, got {X.shape}")
    mu_w = w.mean(axis=0)
    centered = w - mu_w
    Sigma_w = np.einsum("mnj,mnk->njk", centered, centered) / M
    mu_y = X @ model.beta + mu_w
    Sigma_y = Sigma_w + model.sigma2 * np.eye(J)
    sd = np.sqrt(np.einsum("njj->nj", Sigma_y))
    lower = mu_y - Z95 * sd
    upper = mu_y + Z95 * sd
    rho = cross_correlation(Sigma_y)
    return PredictiveSummary(mu_w, Sigma_w, mu_y, Sigma_y, lower, upper, rho)


def predict(model: DncModel, locations, designs, M=200, seed=0) -> PredictiveSummary:
    """Draw M posterior samples at the locations and summarize them."""
    return summarize(draw_posterior(model, locations, M, seed), model, designs)


def cross_correlation(Sigma):
    """Correlation matrix of a covariance (or a batch of covariances).

    ``rho[j, k] = Sigma[j, k] / sqrt(Sigma[j, j] Sigma[k, k])``; a zero
    diagonal entry makes the correlation undefined and raises.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    single = Sigma.ndim == 2
    S = Sigma[None] if single else Sigma
    if S.ndim != 3 or S.shape[1] != S.shape[2]:
        raise ShapeError(f"expected (J, J) or (n, J, J), got {Sigma.shape}")
    d = np.einsum("njj->nj", S)
    if (d <= 0).any():
        raise UndefinedCorrelationError("covariance diagonal must be strictly positive")
    inv_sd = 1.0 / np.sqrt(d)
    rho = S * inv_sd[:, :, None] * inv_sd[:, None, :]
    return rho[0] if single else rho


def true_cross_correlation(Psi, factor_var, sigma2):
    """Outcome cross-correlation implied by a known loading matrix.

    Builds ``Sigma = Psi diag(factor_var) Psi^T + sigma2 * I`` and converts
    it to a correlation matrix; ``factor_var`` holds the marginal variances
    of the latent factors (scalar or length-J vector).
    """
    Psi = np.asarray(Psi, dtype=float)
    single = Psi.ndim == 2
    P = Psi[None] if single else Psi
    J = P.shape[-1]
    if P.ndim != 3 or P.shape[-2] != J:
        raise ShapeError(f"expected (J, J) or (n, J, J) loadings, got {Psi.shape}")
    fv = np.asarray(factor_var, dtype=float)
    if fv.ndim == 0:
        fv = np.full(J, float(fv))
    elif fv.ndim == 2:
        fv = np.diag(fv)
    if fv.shape != (J,):
        raise ShapeError(f"factor variances must be scalar or length {J}")
    Sigma = np.einsum("nkj,j,nlj->nkl", P, fv, P) + sigma2 * np.eye(J)
    rho = cross_correlation(Sigma)
    return rho[0] if single else rho


def strict_upper_entries(mat):
    """Strictly-upper-triangle entries in row-major order, batched or not."""
    mat = np.asarray(mat)
    J = mat.shape[-1]
    idx = [(k, j) for k, j in upper_triangle_positions(J) if j > k]
    if not idx:
        return np.zeros(mat.shape[:-2] + (0,))
    rows, cols = zip(*idx)
    return mat[..., list(rows), list(cols)]
