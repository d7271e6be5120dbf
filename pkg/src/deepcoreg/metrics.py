"""Prediction-quality metrics: RMSPE, interval coverage, interval length."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MetricsReport", "rmspe", "coverage_and_length", "evaluate_predictions"]


@dataclass
class MetricsReport:
    """Per-outcome test metrics plus run bookkeeping."""

    rmspe: list
    coverage: list
    mean_length: list
    n_test: int
    fit_seconds: float | None = None

    def __post_init__(self):
        k = len(self.rmspe)
        if len(self.coverage) != k or len(self.mean_length) != k:
            raise ValueError("per-outcome metric lists must have equal length")
        if any(not 0.0 <= c <= 1.0 for c in self.coverage):
            raise ValueError("coverage must lie in [0, 1]")
        if any(r < 0 for r in self.rmspe) or any(l < 0 for l in self.mean_length):
            raise ValueError("rmspe and interval length must be nonnegative")


def _column(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D array")
    return x


def rmspe(truth, pred):
    """Root mean squared prediction error of one outcome."""
    truth = _column(truth, "truth")
    pred = _column(pred, "pred")
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {pred.shape}")
    return float(np.sqrt(((truth - pred) ** 2).mean()))


def coverage_and_length(truth, lower, upper):
    """Fraction of intervals containing the truth, and their mean width."""
    truth = _column(truth, "truth")
    lower = _column(lower, "lower")
    upper = _column(upper, "upper")
    if not truth.shape == lower.shape == upper.shape:
        raise ValueError("truth, lower and upper must have equal length")
    if (lower > upper).any():
        raise ValueError("crossed interval bounds (lower > upper)")
    coverage = float(((truth >= lower) & (truth <= upper)).mean())
    length = float((upper - lower).mean())
    return coverage, length


def evaluate_predictions(y_true, mu, lower, upper, fit_seconds=None) -> MetricsReport:
    """Per-outcome report for (n, J) truth/means/bounds arrays."""
    y_true = np.asarray(y_true, dtype=float)
    mu = np.asarray(mu, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not y_true.shape == mu.shape == lower.shape == upper.shape or y_true.ndim != 2:
        raise ValueError("expected matching (n, J) arrays")
    rs, cs, ls = [], [], []
    for j in range(y_true.shape[1]):
        rs.append(rmspe(y_true[:, j], mu[:, j]))
        c, l = coverage_and_length(y_true[:, j], lower[:, j], upper[:, j])
        cs.append(c)
        ls.append(l)
    return MetricsReport(rs, cs, ls, n_test=y_true.shape[0], fit_seconds=fit_seconds)
