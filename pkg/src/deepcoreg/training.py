"""Mini-batch training of the coregionalization model.

Network parameters follow stochastic gradients of the penalized loss with a
fresh dropout mask set per mini-batch; the regression coefficients and the
noise variance are refreshed once per epoch by their closed-form solutions
on the full training set, evaluated mask-free. Early stopping monitors the
mask-free validation RMSPE averaged over outcomes and returns the parameters
from the best validation epoch.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import networks
from .model import DncModel, MaskBundle, SpatialDataset, sample_model_masks
from .networks import NumericError, ShapeError

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainingDivergedError",
    "OptimizerState",
    "sgd_or_adam_step",
    "update_beta",
    "update_sigma2",
    "fit",
]

SIGMA2_FLOOR = 1e-8
RIDGE = 1e-8


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch, learning_rate):
        self.epoch = epoch
        self.learning_rate = learning_rate
        super().__init__(
            f"non-finite loss at epoch {epoch} (learning rate {learning_rate})"
        )


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 64
    max_epochs: int = 1000
    patience: int = 150
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    keep_prob_h: float = 0.95
    keep_prob_psi: float = 0.95
    lambda_w: float = 1e-4
    lambda_b: float = 1e-4

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        for name in ("keep_prob_h", "keep_prob_psi"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.lambda_w < 0 or self.lambda_b < 0:
            raise ValueError("penalties must be nonnegative")


@dataclass
class TrainReport:
    epochs_run: int
    train_loss: list
    val_rmspe: list
    beta: np.ndarray
    sigma2: float
    seconds: float
    best_epoch: int

    def __post_init__(self):
        if len(self.train_loss) != self.epochs_run or len(self.val_rmspe) != self.epochs_run:
            raise ValueError("per-epoch trace lengths must equal epochs_run")


@dataclass
class OptimizerState:
    """First/second moment accumulators for Adam; unused slots for SGD."""

    step_count: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def sgd_or_adam_step(params, grads, state: OptimizerState | None, cfg: TrainConfig):
    """One optimizer update on a flat parameter vector.

    SGD: ``theta - lr * g``. Adam: bias-corrected first/second moment update
    with the configured betas and epsilon. Returns ``(new_params, new_state)``.
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise ShapeError(f"params {params.shape} and grads {grads.shape} differ")
    if not np.isfinite(grads).all():
        raise NumericError("non-finite gradient")
    if state is None:
        state = OptimizerState()
    if cfg.optimizer == "sgd":
        return params - cfg.learning_rate * grads, OptimizerState(state.step_count + 1)

    m = np.zeros_like(params) if state.m is None else state.m
    v = np.zeros_like(params) if state.v is None else state.v
    t = state.step_count + 1
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grads
    v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grads ** 2
    m_hat = m / (1.0 - cfg.adam_beta1 ** t)
    v_hat = v / (1.0 - cfg.adam_beta2 ** t)
    new = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return new, OptimizerState(t, m, v)


def update_beta(model: DncModel, data: SpatialDataset, masks: MaskBundle | None = None):
    """Least-squares regression coefficients given the current latent field.

    Solves ``min_beta sum_i ||y_i - X_i beta - Psi(s_i) h(s_i)||^2`` by the
    normal equations; rank-deficient systems fall back to a small ridge with
    a warning.
    """
    from .model import assemble_loading, eval_factors

    if model.p == 0:
        return np.zeros(0)
    X = data.designs
    h = eval_factors(model, data.locations, masks.factor_masks if masks else None)
    Psi = assemble_loading(model, data.locations, masks.loading_masks if masks else None)
    w = np.einsum("nkj,nj->nk", Psi, h)
    target = data.outcomes - w
    A = np.einsum("njp,njq->pq", X, X)
    rhs = np.einsum("njp,nj->p", X, target)
    if np.linalg.matrix_rank(A) < model.p:
        warnings.warn(
            "singular normal equations for beta; applying ridge fallback",
            RuntimeWarning,
        )
        A = A + RIDGE * np.eye(model.p)
    return np.linalg.solve(A, rhs)


def update_sigma2(model: DncModel, data: SpatialDataset, per_component=False):
    """Mean squared residual norm over locations, floored at 1e-8.

    With ``per_component=False`` the per-location squared residual norms
    (summed over the J outcome components) are averaged over the n
    locations. With ``per_component=True`` the sum is divided by ``n * J``
    instead, giving the variance of a single outcome component; this is the
    calibration the predictive intervals need, since the noise enters the
    predictive covariance as ``sigma2 * I`` per component.
    """
    from .model import residual_matrix

    resid = residual_matrix(model, data)
    denom = data.n * (data.n_outcomes if per_component else 1)
    return max(float((resid ** 2).sum()) / denom, SIGMA2_FLOOR)


def _batch_gradient(model: DncModel, S, X, y, bundle: MaskBundle):
    """Flat gradient of the penalized batch loss, plus the loss value."""
    B = S.shape[0]
    h = np.empty((B, model.J))
    fcaches = []
    for j, net in enumerate(model.factor_nets):
        out, cache = networks.forward(net, S, bundle.factor_masks[j])
        h[:, j] = out[:, 0]
        fcaches.append(cache)
    psi = np.empty((B, model.O))
    lcaches = []
    for o, net in enumerate(model.loading_nets):
        out, cache = networks.forward(net, S, bundle.loading_masks[o])
        psi[:, o] = out[:, 0]
        lcaches.append(cache)
    Psi = np.zeros((B, model.J, model.J))
    for o, (k, j) in enumerate(model.positions):
        Psi[:, k, j] = psi[:, o]

    w = np.einsum("bkj,bj->bk", Psi, h)
    resid = X @ model.beta + w - y
    scale = 1.0 / (B * model.sigma2)
    value = 0.5 * scale * float((resid ** 2).sum()) + model.penalty()

    dh = np.einsum("bkj,bk->bj", Psi, resid) * scale
    parts = []
    for j, net in enumerate(model.factor_nets):
        g = networks.backward(net, fcaches[j], dh[:, j : j + 1], bundle.factor_masks[j])
        parts.append(_penalized_flat(g, net, model))
    for o, (k, j) in enumerate(model.positions):
        net = model.loading_nets[o]
        gout = (resid[:, k] * h[:, j])[:, None] * scale
        g = networks.backward(net, lcaches[o], gout, bundle.loading_masks[o])
        parts.append(_penalized_flat(g, net, model))
    return np.concatenate(parts), value


def _penalized_flat(grad_set, net, model):
    segs = []
    for gW, gb, W, b in zip(grad_set.weight_grads, grad_set.bias_grads,
                            net.weights, net.biases):
        segs.append((gW + 2.0 * model.lambda_w * W).ravel())
        segs.append(gb + 2.0 * model.lambda_b * b)
    return np.concatenate(segs)


def _val_rmspe(model: DncModel, data: SpatialDataset):
    from .model import residual_matrix

    resid = residual_matrix(model, data)
    return float(np.sqrt((resid ** 2).mean(axis=0)).mean())


def fit(model: DncModel, train: SpatialDataset, val: SpatialDataset, cfg: TrainConfig):
    """Fit the model; returns a trained copy and a training report.

    Each epoch shuffles the training records into mini-batches, samples one
    fresh dropout mask set per network per batch, and applies the configured
    optimizer to the penalized loss gradient. At the end of every epoch beta
    and sigma^2 are recomputed in closed form and the mask-free validation
    RMSPE is recorded; training stops once it has not improved for
    ``cfg.patience`` epochs, and the best-epoch parameters are restored.
    """
    if train.n_outcomes != val.n_outcomes or train.n_covariates != val.n_covariates:
        raise ShapeError("train and validation datasets disagree on J or p")
    if train.n == 0 or val.n == 0:
        raise ValueError("empty dataset")

    t0 = time.perf_counter()
    model = model.copy()
    model.keep_prob_h = cfg.keep_prob_h
    model.keep_prob_psi = cfg.keep_prob_psi
    model.lambda_w = cfg.lambda_w
    model.lambda_b = cfg.lambda_b

    rng = np.random.default_rng(cfg.seed)
    params = model.flat()
    state = OptimizerState()
    best = (np.inf, None, -1)
    train_losses, val_curve = [], []
    epochs_run = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(train.n)
        batch_losses = []
        for start in range(0, train.n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            bundle = sample_model_masks(model, rng)
            grads, value = _batch_gradient(
                model, train.locations[idx], train.designs[idx],
                train.outcomes[idx], bundle,
            )
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, cfg.learning_rate)
            params, state = sgd_or_adam_step(params, grads, state, cfg)
            model.set_flat(params)
            batch_losses.append(value)

        model.beta = update_beta(model, train)
        model.sigma2 = update_sigma2(model, train, per_component=True)
        vr = _val_rmspe(model, val)
        train_losses.append(float(np.mean(batch_losses)))
        val_curve.append(vr)
        epochs_run = epoch + 1
        if vr < best[0]:
            best = (vr, (params.copy(), model.beta.copy(), model.sigma2), epoch)
        elif epoch - best[2] >= cfg.patience:
            break

    if best[1] is not None:
        flat, beta, sigma2 = best[1]
        model.set_flat(flat)
        model.beta = beta
        model.sigma2 = sigma2
    report = TrainReport(
        epochs_run=epochs_run,
        train_loss=train_losses,
        val_rmspe=val_curve,
        beta=model.beta.copy(),
        sigma2=model.sigma2,
        seconds=time.perf_counter() - t0,
        best_epoch=best[2],
    )
    return model, report
