"""File formats: datasets, checkpoints, predictions, metrics, manifests.

Dataset CSV schema
    header ``s1,s2,x1..xp,y1..yJ``, one row per location. The flat covariate
    vector is expanded to the per-location design matrix X(s) by the
    dataset's ``design_mode``:

    * ``"shared"``     - every outcome row of X(s) is x(s)^T (shared
      covariates and coefficients across outcomes);
    * ``"per_outcome"`` - requires p == J and sets X(s) = diag(x(s)), giving
      each outcome its own covariate and coefficient.

    Coordinates outside the unit square are min-max normalized per
    coordinate on load and the affine mapping is reported so it can be
    inverted; coordinates already inside [0, 1]^2 are left untouched.

Prediction CSV schema
    ``s1,s2`` then ``mu_y_j,lo_j,hi_j`` for j = 1..J (grouped per outcome),
    then the strictly-upper-triangle outcome correlations ``rho_jk`` in
    row-major order (J(J-1)/2 columns).

Checkpoints and metrics are JSON documents; every float is serialized with
full round-trip precision, so loading a checkpoint reproduces each
parameter bit-exactly.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .metrics import MetricsReport
from .model import DncModel, SpatialDataset, upper_triangle_positions
from .networks import DenseNetwork
from .posterior import PredictiveSummary, strict_upper_entries

__all__ = [
    "DataFormatError",
    "save_dataset",
    "load_dataset",
    "read_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "save_predictions",
    "load_predictions",
    "save_metrics",
    "load_metrics",
    "save_truth",
    "save_manifest",
    "load_manifest",
]

CHECKPOINT_SCHEMA = "deepcoreg-checkpoint/1"
DESIGN_MODES = ("shared", "per_outcome")


class DataFormatError(ValueError):
    """Malformed input file; carries the offending path and line when known."""

    def __init__(self, message, path=None, line=None):
        self.path = str(path) if path is not None else None
        self.line = line
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


def _fmt(v):
    return repr(float(v))


# ---------------------------------------------------------------------------
# datasets


def _expand_designs(x, J, design_mode):
    n, p = x.shape
    if design_mode == "shared":
        X = np.repeat(x[:, None, :], J, axis=1)
    elif design_mode == "per_outcome":
        if p != J:
            raise DataFormatError(
                f"per_outcome designs need p == J, got p={p}, J={J}"
            )
        X = np.zeros((n, J, J))
        for j in range(J):
            X[:, j, j] = x[:, j]
    else:
        raise DataFormatError(f"unknown design_mode {design_mode!r}")
    return X


def _collapse_designs(X, design_mode):
    n, J, p = X.shape
    if design_mode == "shared":
        if not all(np.array_equal(X[:, 0, :], X[:, j, :]) for j in range(1, J)):
            raise DataFormatError("designs are not shared across outcome rows")
        return X[:, 0, :]
    if design_mode == "per_outcome":
        if p != J:
            raise DataFormatError("per_outcome designs need p == J")
        x = np.einsum("njj->nj", X)
        rebuilt = _expand_designs(x, J, "per_outcome")
        if not np.array_equal(rebuilt, X):
            raise DataFormatError("designs are not diagonal (per_outcome)")
        return x
    raise DataFormatError(f"unknown design_mode {design_mode!r}")


def save_dataset(dataset: SpatialDataset, path, design_mode="shared"):
    """Write a dataset to the flat CSV schema."""
    path = Path(path)
    x = _collapse_designs(dataset.designs, design_mode)
    p, J = x.shape[1], dataset.n_outcomes
    header = ["s1", "s2"] + [f"x{i+1}" for i in range(p)] + [f"y{j+1}" for j in range(J)]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [_fmt(dataset.locations[i, 0]), _fmt(dataset.locations[i, 1])]
            row += [_fmt(v) for v in x[i]]
            row += [_fmt(v) for v in dataset.outcomes[i]]
            writer.writerow(row)


def _parse_header(header, path):
    if header[:2] != ["s1", "s2"]:
        raise DataFormatError("header must start with s1,s2", path, 1)
    p = 0
    i = 2
    while i < len(header) and header[i] == f"x{p+1}":
        p += 1
        i += 1
    J = 0
    while i < len(header) and header[i] == f"y{J+1}":
        J += 1
        i += 1
    if i != len(header) or J == 0:
        raise DataFormatError(
            f"header must be s1,s2,x1..xp,y1..yJ, got {','.join(header)}", path, 1
        )
    return p, J


def read_dataset(path, design_mode=None):
    """Parse a dataset CSV; returns ``(SpatialDataset, info dict)``.

    ``info`` records the design mode actually applied, the inferred p and J,
    and the per-coordinate affine normalization (identity when the
    coordinates were already inside the unit square). ``design_mode=None``
    consults the sibling manifest (``<stem>.manifest.json`` or
    ``manifest.json`` in the same directory) and falls back to ``"shared"``.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError("file not found", path)
    if design_mode is None:
        design_mode = _design_mode_from_manifest(path) or "shared"
    if design_mode not in DESIGN_MODES:
        raise DataFormatError(f"unknown design_mode {design_mode!r}", path)

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty file", path) from None
        p, J = _parse_header([h.strip() for h in header], path)
        width = 2 + p + J
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataFormatError(
                    f"expected {width} fields, got {len(row)}", path, line_no
                )
            vals = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"non-numeric value {cell!r} in column {col}", path, line_no
                    ) from None
                if not math.isfinite(v):
                    raise DataFormatError(
                        f"non-finite value in column {col}", path, line_no
                    )
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataFormatError("no data rows", path)
    arr = np.asarray(rows, dtype=float)
    S = arr[:, :2]
    x = arr[:, 2 : 2 + p]
    y = arr[:, 2 + p :]

    offsets, scales = np.zeros(2), np.ones(2)
    for c in range(2):
        lo, hi = S[:, c].min(), S[:, c].max()
        if lo < 0.0 or hi > 1.0:
            span = hi - lo
            if span == 0.0:
                offsets[c], scales[c] = lo, 1.0
                S[:, c] = 0.0
            else:
                offsets[c], scales[c] = lo, span
                S[:, c] = (S[:, c] - lo) / span
    dataset = SpatialDataset(S, _expand_designs(x, y.shape[1], design_mode), y)
    info = {
        "design_mode": design_mode,
        "p": p,
        "J": y.shape[1],
        "n": arr.shape[0],
        "normalization": {"offset": offsets.tolist(), "scale": scales.tolist()},
    }
    return dataset, info


def load_dataset(path, design_mode=None) -> SpatialDataset:
    return read_dataset(path, design_mode)[0]


def _design_mode_from_manifest(path):
    for candidate in (path.with_suffix(".manifest.json"),
                      path.parent / "manifest.json"):
        if candidate.exists():
            try:
                manifest = json.loads(candidate.read_text())
            except json.JSONDecodeError:
                return None
            mode = manifest.get("design_mode")
            if mode in DESIGN_MODES:
                return mode
    return None


# ---------------------------------------------------------------------------
# checkpoints


def _net_payload(net: DenseNetwork):
    return {"widths": list(net.widths), "params": net.flat().tolist()}


def _net_from_payload(payload):
    widths = payload["widths"]
    net = DenseNetwork(
        widths,
        weights=[np.zeros((widths[l], widths[l - 1])) for l in range(1, len(widths))],
        biases=[np.zeros(widths[l]) for l in range(1, len(widths))],
    )
    net.set_flat(np.asarray(payload["params"], dtype=float))
    return net


def save_checkpoint(model: DncModel, path, seed=None, extra=None):
    """Serialize every model field to a versioned JSON document."""
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "J": model.J,
        "p": model.p,
        "factor_nets": [_net_payload(n) for n in model.factor_nets],
        "loading_nets": [_net_payload(n) for n in model.loading_nets],
        "beta": model.beta.tolist(),
        "sigma2": model.sigma2,
        "keep_prob_h": model.keep_prob_h,
        "keep_prob_psi": model.keep_prob_psi,
        "lambda_w": model.lambda_w,
        "lambda_b": model.lambda_b,
        "seed": seed,
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> DncModel:
    path = Path(path)
    if not path.exists():
        raise DataFormatError("file not found", path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON: {exc}", path) from None
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise DataFormatError(
            f"unsupported checkpoint schema {doc.get('schema')!r}", path
        )
    return DncModel(
        doc["J"], doc["p"],
        [_net_from_payload(nd) for nd in doc["factor_nets"]],
        [_net_from_payload(nd) for nd in doc["loading_nets"]],
        np.asarray(doc["beta"], dtype=float),
        doc["sigma2"],
        keep_prob_h=doc["keep_prob_h"], keep_prob_psi=doc["keep_prob_psi"],
        lambda_w=doc["lambda_w"], lambda_b=doc["lambda_b"],
    )


# ---------------------------------------------------------------------------
# predictions, metrics, truth, manifests


def prediction_columns(J):
    cols = ["s1", "s2"]
    for j in range(1, J + 1):
        cols += [f"mu_y_{j}", f"lo_{j}", f"hi_{j}"]
    for k, j in upper_triangle_positions(J):
        if j > k:
            cols.append(f"rho_{k+1}{j+1}")
    return cols


def save_predictions(path, locations, summary: PredictiveSummary):
    locations = np.asarray(locations, dtype=float)
    J = summary.mu_y.shape[1]
    rho_cols = strict_upper_entries(summary.rho)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(prediction_columns(J))
        for i in range(locations.shape[0]):
            row = [_fmt(locations[i, 0]), _fmt(locations[i, 1])]
            for j in range(J):
                row += [_fmt(summary.mu_y[i, j]), _fmt(summary.lower[i, j]),
                        _fmt(summary.upper[i, j])]
            row += [_fmt(v) for v in rho_cols[i]]
            writer.writerow(row)


def load_predictions(path):
    """Read a prediction CSV back into arrays (locations, mu, lo, hi, rho)."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError("file not found", path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError("empty file", path)
        J = sum(1 for c in header if c.startswith("mu_y_"))
        if J == 0 or header != prediction_columns(J):
            raise DataFormatError("not a prediction file (bad header)", path, 1)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DataFormatError("non-numeric cell", path, line_no) from None
    arr = np.asarray(rows, dtype=float)
    if arr.size == 0:
        raise DataFormatError("no data rows", path)
    S = arr[:, :2]
    mu = arr[:, 2 : 2 + 3 * J : 3]
    lo = arr[:, 3 : 2 + 3 * J : 3]
    hi = arr[:, 4 : 2 + 3 * J : 3]
    rho = arr[:, 2 + 3 * J :]
    return S, mu, lo, hi, rho


def save_metrics(path, report: MetricsReport):
    doc = {
        "outcomes": {
            str(j + 1): {
                "rmspe": report.rmspe[j],
                "coverage": report.coverage[j],
                "mean_interval_length": report.mean_length[j],
            }
            for j in range(len(report.rmspe))
        },
        "n_test": report.n_test,
        "fit_seconds": report.fit_seconds,
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_metrics(path) -> MetricsReport:
    doc = json.loads(Path(path).read_text())
    keys = sorted(doc["outcomes"], key=int)
    return MetricsReport(
        [doc["outcomes"][k]["rmspe"] for k in keys],
        [doc["outcomes"][k]["coverage"] for k in keys],
        [doc["outcomes"][k]["mean_interval_length"] for k in keys],
        n_test=doc["n_test"],
        fit_seconds=doc.get("fit_seconds"),
    )


def save_truth(path, sim_output):
    """Per-location ground truth sidecar CSV with a split label column."""
    first = next(iter(sim_output.truth.values()))
    J = first.h.shape[1]
    positions = upper_triangle_positions(J)
    header = ["s1", "s2", "split"]
    header += [f"h{j+1}" for j in range(J)]
    header += [f"psi_{k+1}{j+1}" for k, j in positions]
    header += [f"w{j+1}" for j in range(J)]
    header += [f"eps{j+1}" for j in range(J)]
    header += [f"rho_{k+1}{j+1}" for k, j in positions if j > k]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for name in ("train", "val", "test"):
            data = sim_output.split(name)
            truth = sim_output.truth[name]
            rho_cols = strict_upper_entries(truth.rho)
            for i in range(data.n):
                row = [_fmt(data.locations[i, 0]), _fmt(data.locations[i, 1]), name]
                row += [_fmt(v) for v in truth.h[i]]
                row += [_fmt(v) for v in truth.psi[i]]
                row += [_fmt(v) for v in truth.w[i]]
                row += [_fmt(v) for v in truth.eps[i]]
                row += [_fmt(v) for v in rho_cols[i]]
                writer.writerow(row)


def save_manifest(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
