"""Synthetic multivariate spatial data with known ground truth.

Two generators are provided. The stationary design draws every latent
surface from an exponential-kernel Gaussian process with a shared range;
the diagonal loadings get a +1 offset so they stay mostly positive while
the off-diagonal loading is mean zero, which makes the outcome
cross-correlation change sign across the domain. The second design warps
space through a 5-dimensional Matern-3/2 latent map and samples the loading
surfaces on the warped coordinates, producing nonstationary loadings that a
stationary process cannot represent.

Sampling is exact: each surface is ``L xi`` with ``L`` the Cholesky factor
of the (jittered) kernel Gram matrix. Records are generated in a fixed
order, so a seed pins the entire output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .model import SpatialDataset, upper_triangle_positions
from .posterior import true_cross_correlation

__all__ = [
    "Kernel",
    "SimTruth",
    "SimOutput",
    "NotPositiveDefiniteError",
    "kernel_eval",
    "kernel_gram",
    "gp_sample",
    "simulate_stationary",
    "simulate_deepgp",
]

JITTER_MAX = 1e-4
SPLIT_DEFAULT = (1500, 500, 500)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Gram matrix stayed non-factorizable after jitter escalation."""


@dataclass(frozen=True)
class Kernel:
    """Distance-based covariance function."""

    family: str
    variance: float = 1.0
    length_scale: float = 1.0

    def __post_init__(self):
        if self.family not in ("exponential", "matern32"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (self.variance > 0 and self.length_scale > 0):
            raise ValueError("variance and length_scale must be positive")

    def of_distance(self, d):
        d = np.asarray(d, dtype=float)
        if self.family == "exponential":
            return self.variance * np.exp(-d / self.length_scale)
        a = np.sqrt(3.0) * d / self.length_scale
        return self.variance * (1.0 + a) * np.exp(-a)


def kernel_eval(kernel: Kernel, s, t):
    """Covariance between two points (any common dimension)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return float(kernel.of_distance(np.linalg.norm(s - t)))


def kernel_gram(kernel: Kernel, coords):
    """Dense Gram matrix over one coordinate set."""
    D = squareform(pdist(np.asarray(coords, dtype=float)))
    return kernel.of_distance(D)


def _jittered_cholesky(K, jitter):
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(K + j * np.eye(K.shape[0])), j
        except np.linalg.LinAlgError:
            j *= 2.0
            if j > JITTER_MAX:
                raise NotPositiveDefiniteError(
                    f"Cholesky failed up to jitter {JITTER_MAX}"
                ) from None


def gp_sample(kernel: Kernel, coords, rng, jitter=1e-8):
    """One exact zero-mean GP sample at the coordinates.

    Returns ``L xi`` with ``L`` the lower Cholesky factor of the Gram matrix
    plus ``jitter`` on the diagonal (doubled as needed up to 1e-4) and
    ``xi`` i.i.d. standard normal.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[0] < 1:
        raise ValueError("coords must be a nonempty (n, d) array")
    L, _ = _jittered_cholesky(kernel_gram(kernel, coords), jitter)
    return L @ rng.standard_normal(coords.shape[0])


@dataclass
class SimTruth:
    """Ground-truth surfaces aligned with the rows of one dataset split."""

    h: np.ndarray       # (m, J) latent factors
    psi: np.ndarray     # (m, O) upper-triangle loadings, row-major
    w: np.ndarray       # (m, J) spatial effects Psi h
    eps: np.ndarray     # (m, J) realized measurement noise
    rho: np.ndarray     # (m, J, J) outcome cross-correlation

    def take(self, idx):
        return SimTruth(self.h[idx], self.psi[idx], self.w[idx],
                        self.eps[idx], self.rho[idx])


@dataclass
class SimOutput:
    train: SpatialDataset
    val: SpatialDataset
    test: SpatialDataset
    truth: dict            # split name -> SimTruth
    params: dict           # generator parameters, echoed

    def split(self, name):
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def _check_split(n, split):
    split = tuple(int(v) for v in split)
    if len(split) != 3 or any(v <= 0 for v in split):
        raise ValueError("split must be three positive sizes")
    if sum(split) != n:
        raise ValueError(f"split {split} must sum to n={n}")
    return split


def _package(S, X, y, truth_full: SimTruth, split, params):
    n_tr, n_va, _ = split
    parts = {}
    datasets = {}
    bounds = {"train": slice(0, n_tr), "val": slice(n_tr, n_tr + n_va),
              "test": slice(n_tr + n_va, None)}
    for name, sl in bounds.items():
        datasets[name] = SpatialDataset(S[sl], X[sl], y[sl])
        parts[name] = truth_full.take(sl)
    return SimOutput(datasets["train"], datasets["val"], datasets["test"],
                     parts, params)


def simulate_stationary(n=2500, phi=0.5, beta=(1.0, 1.0), sigma2=0.5, seed=0,
                        split=SPLIT_DEFAULT, jitter=1e-8):
    """Bivariate outcomes with stationary-GP factors and loadings.

    Locations are uniform on the unit square. The factors h1, h2 and the
    loading perturbations are independent exponential-kernel GPs with the
    common range ``phi``; the loading surfaces are ``psi11 = 1 + eta11``,
    ``psi22 = 1 + eta22``, ``psi12 = eta21``. Each outcome has its own
    standard-normal covariate, encoded as the diagonal design
    ``X(s) = diag(x1(s), x2(s))`` with coefficients ``beta``.
    """
    split = _check_split(n, split)
    beta = np.asarray(beta, dtype=float).reshape(2)
    rng = np.random.default_rng(seed)
    S = rng.uniform(0.0, 1.0, (n, 2))
    kern = Kernel("exponential", 1.0, phi)
    L, _ = _jittered_cholesky(kernel_gram(kern, S), jitter)
    h1, h2 = L @ rng.standard_normal(n), L @ rng.standard_normal(n)
    eta11 = L @ rng.standard_normal(n)
    eta22 = L @ rng.standard_normal(n)
    eta21 = L @ rng.standard_normal(n)
    psi = np.column_stack([1.0 + eta11, eta21, 1.0 + eta22])  # (11), (12), (22)
    h = np.column_stack([h1, h2])

    x = rng.standard_normal((n, 2))
    X = np.zeros((n, 2, 2))
    X[:, 0, 0] = x[:, 0]
    X[:, 1, 1] = x[:, 1]
    eps = rng.normal(0.0, np.sqrt(sigma2), (n, 2))

    Psi = _psi_matrices(psi, 2)
    w = np.einsum("nkj,nj->nk", Psi, h)
    y = X @ beta + w + eps
    rho = true_cross_correlation(Psi, 1.0, sigma2)
    truth = SimTruth(h, psi, w, eps, rho)
    params = {
        "design": "stationary", "n": n, "phi": phi, "beta": beta.tolist(),
        "sigma2": sigma2, "seed": seed, "split": list(split),
        "kernel": "exponential", "design_mode": "per_outcome",
    }
    return _package(S, X, y, truth, split, params)


def simulate_deepgp(n=2500, seed=0, split=SPLIT_DEFAULT, jitter=1e-8,
                    phi_h=0.2, phi_u=0.4, phi_psi=0.3, n_latent=5,
                    beta=0.25, sigma_eps=0.1):
    """Bivariate outcomes whose loadings live on a warped latent space.

    Factors are Matern-3/2 GPs on the plane (range ``phi_h``). Locations are
    mapped through ``n_latent`` independent Matern-3/2 GPs (range ``phi_u``)
    into latent coordinates ``u(s)``, and each upper-triangle loading entry
    is a Matern-3/2 GP (range ``phi_psi``) sampled on the Euclidean
    distances between latent coordinates. One shared standard-normal
    covariate enters both outcome rows with coefficient ``beta``.
    """
    split = _check_split(n, split)
    rng = np.random.default_rng(seed)
    S = rng.uniform(0.0, 1.0, (n, 2))

    Lh, _ = _jittered_cholesky(kernel_gram(Kernel("matern32", 1.0, phi_h), S), jitter)
    h = np.column_stack([Lh @ rng.standard_normal(n) for _ in range(2)])

    Lu, _ = _jittered_cholesky(kernel_gram(Kernel("matern32", 1.0, phi_u), S), jitter)
    U = np.column_stack([Lu @ rng.standard_normal(n) for _ in range(n_latent)])

    Lpsi, _ = _jittered_cholesky(
        kernel_gram(Kernel("matern32", 1.0, phi_psi), U), jitter
    )
    psi = np.column_stack([Lpsi @ rng.standard_normal(n) for _ in range(3)])

    x = rng.standard_normal(n)
    X = np.zeros((n, 2, 1))
    X[:, 0, 0] = x
    X[:, 1, 0] = x
    eps = rng.normal(0.0, sigma_eps, (n, 2))

    Psi = _psi_matrices(psi, 2)
    w = np.einsum("nkj,nj->nk", Psi, h)
    y = X @ np.array([beta]) + w + eps
    sigma2 = sigma_eps ** 2
    rho = true_cross_correlation(Psi, 1.0, sigma2)
    truth = SimTruth(h, psi, w, eps, rho)
    params = {
        "design": "deepgp", "n": n, "seed": seed, "split": list(split),
        "phi_h": phi_h, "phi_u": phi_u, "phi_psi": phi_psi,
        "n_latent": n_latent, "beta": [beta], "sigma2": sigma2,
        "kernel": "matern32", "design_mode": "shared",
    }
    return _package(S, X, y, truth, split, params)


def _psi_matrices(psi_cols, J):
    n = psi_cols.shape[0]
    Psi = np.zeros((n, J, J))
    for o, (k, j) in enumerate(upper_triangle_positions(J)):
        Psi[:, k, j] = psi_cols[:, o]
    return Psi
