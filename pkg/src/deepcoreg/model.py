"""Spatially varying coregionalization model built from dense networks.

The model represents ``y(s) = X(s) beta + Psi(s) h(s) + eps(s)`` where the
J latent factors ``h_j`` and the ``O = J(J+1)/2`` upper-triangular loading
entries of ``Psi`` are each the output of an independent ``R^2 -> R`` dense
network. ``Psi`` is strictly upper triangular below the diagonal (zeros),
and its entries are filled in row-major position order
``(1,1), (1,2), ..., (1,J), (2,2), ..., (J,J)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import networks
from .networks import DenseNetwork, DropoutMaskSet, ShapeError

__all__ = [
    "DncModel",
    "SpatialDataset",
    "MaskBundle",
    "upper_triangle_positions",
    "eval_factors",
    "assemble_loading",
    "predict_mean",
    "loss",
    "residual_matrix",
    "sample_model_masks",
]


def upper_triangle_positions(J: int):
    """Row-major (row, col) index pairs of the upper triangle, 0-based."""
    return [(k, j) for k in range(J) for j in range(k, J)]


@dataclass
class SpatialDataset:
    """Observed multivariate spatial records.

    locations : (n, 2) coordinates in the unit square
    designs   : (n, J, p) per-location design matrices X(s)
    outcomes  : (n, J) per-location outcome vectors y(s)
    """

    locations: np.ndarray
    designs: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float)
        self.designs = np.asarray(self.designs, dtype=float)
        self.outcomes = np.asarray(self.outcomes, dtype=float)
        n = self.locations.shape[0]
        if n == 0:
            raise ValueError("dataset is empty")
        if self.locations.ndim != 2 or self.locations.shape[1] != 2:
            raise ShapeError(f"locations must be (n, 2), got {self.locations.shape}")
        if self.outcomes.ndim != 2 or self.outcomes.shape[0] != n:
            raise ShapeError(f"outcomes must be (n, J), got {self.outcomes.shape}")
        J = self.outcomes.shape[1]
        if self.designs.ndim != 3 or self.designs.shape[:2] != (n, J):
            raise ShapeError(
                f"designs must be (n, J, p) with n={n}, J={J}, got {self.designs.shape}"
            )
        for name, arr in (("locations", self.locations),
                          ("designs", self.designs),
                          ("outcomes", self.outcomes)):
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite values in {name}")
        eps = 1e-9
        if (self.locations < -eps).any() or (self.locations > 1 + eps).any():
            raise ValueError("locations must lie in the unit square [0, 1]^2")

    @property
    def n(self):
        return self.locations.shape[0]

    @property
    def n_outcomes(self):
        return self.outcomes.shape[1]

    @property
    def n_covariates(self):
        return self.designs.shape[2]

    def take(self, idx):
        return SpatialDataset(
            self.locations[idx], self.designs[idx], self.outcomes[idx]
        )


@dataclass
class MaskBundle:
    """One dropout mask set per factor network and per loading network."""

    factor_masks: list
    loading_masks: list

    def require_match(self, model: "DncModel"):
        if len(self.factor_masks) != model.J or len(self.loading_masks) != model.O:
            raise ShapeError("mask bundle does not match the model's network counts")
        for m, net in zip(self.factor_masks, model.factor_nets):
            m.require_match(net)
        for m, net in zip(self.loading_masks, model.loading_nets):
            m.require_match(net)


class DncModel:
    """J factor networks, J(J+1)/2 loading networks, beta and sigma^2."""

    def __init__(self, J, p, factor_nets, loading_nets, beta, sigma2,
                 keep_prob_h=0.95, keep_prob_psi=0.95,
                 lambda_w=1e-4, lambda_b=1e-4):
        self.J = int(J)
        self.p = int(p)
        self.factor_nets = list(factor_nets)
        self.loading_nets = list(loading_nets)
        self.beta = np.asarray(beta, dtype=float).reshape(self.p)
        self.sigma2 = float(sigma2)
        self.keep_prob_h = float(keep_prob_h)
        self.keep_prob_psi = float(keep_prob_psi)
        self.lambda_w = float(lambda_w)
        self.lambda_b = float(lambda_b)
        self._validate()

    def _validate(self):
        O = self.J * (self.J + 1) // 2
        if len(self.factor_nets) != self.J:
            raise ShapeError(f"expected {self.J} factor networks")
        if len(self.loading_nets) != O:
            raise ShapeError(f"expected {O} loading networks")
        for net in self.factor_nets + self.loading_nets:
            if net.widths[0] != 2 or net.widths[-1] != 1:
                raise ShapeError("latent networks must map R^2 -> R")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        for name, v in (("keep_prob_h", self.keep_prob_h),
                        ("keep_prob_psi", self.keep_prob_psi)):
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.lambda_w < 0 or self.lambda_b < 0:
            raise ValueError("penalty coefficients must be nonnegative")

    @classmethod
    def initialize(cls, J, p, hidden=(64, 64), keep_prob_h=0.95, keep_prob_psi=0.95,
                   lambda_w=1e-4, lambda_b=1e-4, rng=None):
        """He-initialized networks, zero beta, unit noise variance."""
        rng = np.random.default_rng() if rng is None else rng
        widths = (2, *hidden, 1)
        O = J * (J + 1) // 2
        factor_nets = [DenseNetwork(widths, rng=rng) for _ in range(J)]
        loading_nets = [DenseNetwork(widths, rng=rng) for _ in range(O)]
        return cls(J, p, factor_nets, loading_nets,
                   beta=np.zeros(p), sigma2=1.0,
                   keep_prob_h=keep_prob_h, keep_prob_psi=keep_prob_psi,
                   lambda_w=lambda_w, lambda_b=lambda_b)

    @property
    def O(self):
        return self.J * (self.J + 1) // 2

    @property
    def nets(self):
        return self.factor_nets + self.loading_nets

    @property
    def positions(self):
        return upper_triangle_positions(self.J)

    def copy(self):
        return DncModel(
            self.J, self.p,
            [net.copy() for net in self.factor_nets],
            [net.copy() for net in self.loading_nets],
            self.beta.copy(), self.sigma2,
            self.keep_prob_h, self.keep_prob_psi,
            self.lambda_w, self.lambda_b,
        )

    def flat(self):
        """All network parameters as one vector, factor nets then loading nets."""
        return np.concatenate([net.flat() for net in self.nets])

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=float)
        pos = 0
        for net in self.nets:
            net.set_flat(vec[pos : pos + net.n_params])
            pos += net.n_params
        if pos != vec.size:
            raise ShapeError(f"expected {pos} parameters, got {vec.size}")

    def penalty(self):
        """L2 weight/bias penalty summed over every layer of every network."""
        pw = sum(float((W ** 2).sum()) for net in self.nets for W in net.weights)
        pb = sum(float((b ** 2).sum()) for net in self.nets for b in net.biases)
        return self.lambda_w * pw + self.lambda_b * pb


def _eval_net_column(nets, s, mask_list, caches_out=None):
    s2 = np.atleast_2d(np.asarray(s, dtype=float))
    out = np.empty((s2.shape[0], len(nets)))
    for i, net in enumerate(nets):
        m = mask_list[i] if mask_list is not None else None
        val, cache = networks.forward(net, s2, m)
        out[:, i] = val[:, 0]
        if caches_out is not None:
            caches_out.append(cache)
    return out


def eval_factors(model: DncModel, s, masks=None):
    """Latent factor vector h(s); component j is factor network j at s.

    ``s`` may be a single location ``(2,)`` or a batch ``(B, 2)``; ``masks``
    is an optional list of one DropoutMaskSet per factor network.
    """
    single = np.asarray(s).ndim == 1
    h = _eval_net_column(model.factor_nets, s, masks)
    return h[0] if single else h


def assemble_loading(model: DncModel, s, masks=None):
    """Upper-triangular loading matrix Psi(s) with zeros below the diagonal.

    The O network outputs fill positions (1,1), (1,2), ..., (J,J) in
    row-major order.
    """
    single = np.asarray(s).ndim == 1
    vals = _eval_net_column(model.loading_nets, s, masks)
    B = vals.shape[0]
    Psi = np.zeros((B, model.J, model.J))
    for o, (k, j) in enumerate(model.positions):
        Psi[:, k, j] = vals[:, o]
    return Psi[0] if single else Psi


def predict_mean(model: DncModel, s, X, masks: MaskBundle | None = None):
    """Model mean X(s) beta + Psi(s) h(s) under one mask regime."""
    single = np.asarray(s).ndim == 1
    s2 = np.atleast_2d(np.asarray(s, dtype=float))
    X = np.asarray(X, dtype=float)
    X3 = X[None] if X.ndim == 2 else X
    if X3.shape != (s2.shape[0], model.J, model.p):
        raise ShapeError(
            f"designs must be (B, J, p) = {(s2.shape[0], model.J, model.p)}, "
            f"got {X3.shape}"
        )
    if masks is not None:
        masks.require_match(model)
    h = eval_factors(model, s2, masks.factor_masks if masks else None)
    Psi = assemble_loading(model, s2, masks.loading_masks if masks else None)
    w = np.einsum("bkj,bj->bk", Psi, h)
    yhat = X3 @ model.beta + w
    return yhat[0] if single else yhat


def loss(model: DncModel, batch: SpatialDataset, masks: MaskBundle | None = None):
    """Penalized batch objective.

    ``(1 / (2 |B| sigma^2)) sum_i ||y_i - yhat_i||^2`` plus the L2 penalty
    ``lambda_w sum ||W||^2 + lambda_b sum ||b||^2`` over all layers of all
    factor and loading networks. The data-fit term is a batch mean, so the
    full-dataset objective is recovered when the batch is the whole dataset.
    """
    if batch.n == 0:
        raise ValueError("empty batch")
    yhat = predict_mean(model, batch.locations, batch.designs, masks)
    resid = batch.outcomes - yhat
    fit = float((resid ** 2).sum()) / (2.0 * batch.n * model.sigma2)
    return fit + model.penalty()


def residual_matrix(model: DncModel, data: SpatialDataset):
    """Deterministic (mask-free) residuals y(s_i) - yhat(s_i), shape (n, J)."""
    return data.outcomes - predict_mean(model, data.locations, data.designs)


def sample_model_masks(model: DncModel, rng) -> MaskBundle:
    """Fresh Bernoulli mask sets for every network, at the model's keep rates."""
    return MaskBundle(
        [networks.sample_masks(net, model.keep_prob_h, rng) for net in model.factor_nets],
        [networks.sample_masks(net, model.keep_prob_psi, rng) for net in model.loading_nets],
    )
