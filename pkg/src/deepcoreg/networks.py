"""Dense feed-forward networks with unit-level dropout and analytic backprop.

These small relu networks are the computational substrate for every latent
spatial function in the model. They are deliberately minimal: dense layers
only, relu hidden activations, identity output, and explicit binary dropout
masks applied *after* each hidden activation. Masks are never rescaled by
the keep probability, so masking parameters directly (``apply_mask_to_params``)
and masking activations (``forward`` with masks) produce identical outputs.

All evaluation routines accept either a single input vector ``(K_0,)`` or a
batch ``(B, K_0)``; gradients accumulate over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DenseNetwork",
    "DropoutMaskSet",
    "GradientSet",
    "ForwardCache",
    "forward",
    "backward",
    "apply_mask_to_params",
    "sample_masks",
]

MAX_LAYERS = 4


class ShapeError(ValueError):
    """Array shape inconsistent with the network architecture."""


class NumericError(FloatingPointError):
    """Non-finite value fed into or produced by a network."""


class MaskMismatchError(ValueError):
    """Forward cache and dropout masks do not belong together."""


def _as_2d(x, name="input"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ShapeError(f"{name} must be 1-D or 2-D, got ndim={x.ndim}")


class DenseNetwork:
    """A dense relu network defined by its layer widths.

    Parameters
    ----------
    widths : sequence of int
        Layer sizes ``[K_0, ..., K_L]``; ``K_0`` is the input dimension and
        ``K_L`` the output dimension. At most ``MAX_LAYERS`` affine layers.
    weights, biases : list of ndarray, optional
        Per-layer parameters; layer ``l`` has weight shape ``(K_l, K_{l-1})``
        and bias shape ``(K_l,)``. When omitted the weights are drawn
        He-style, ``N(0, 2 / K_{l-1})``, with zero biases.
    rng : numpy Generator, optional
        Source for the He initialization.
    """

    def __init__(self, widths, weights=None, biases=None, rng=None):
        widths = [int(k) for k in widths]
        if len(widths) < 2:
            raise ShapeError("need at least an input and an output width")
        if any(k < 1 for k in widths):
            raise ShapeError(f"widths must be positive, got {widths}")
        if len(widths) - 1 > MAX_LAYERS:
            raise ShapeError(
                f"at most {MAX_LAYERS} layers supported, got {len(widths) - 1}"
            )
        self.widths = tuple(widths)
        if weights is None:
            rng = np.random.default_rng() if rng is None else rng
            weights = [
                rng.normal(0.0, np.sqrt(2.0 / widths[l - 1]), (widths[l], widths[l - 1]))
                for l in range(1, len(widths))
            ]
            biases = [np.zeros(widths[l]) for l in range(1, len(widths))]
        self.weights = [np.array(W, dtype=float) for W in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        self._validate()

    def _validate(self):
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise ShapeError("one weight matrix and one bias per layer required")
        for l, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            if W.shape != (self.widths[l], self.widths[l - 1]):
                raise ShapeError(
                    f"layer {l} weight shape {W.shape}, expected "
                    f"{(self.widths[l], self.widths[l - 1])}"
                )
            if b.shape != (self.widths[l],):
                raise ShapeError(
                    f"layer {l} bias shape {b.shape}, expected {(self.widths[l],)}"
                )
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise NumericError(f"non-finite parameter in layer {l}")

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self):
        return DenseNetwork(
            self.widths,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
        )

    def flat(self):
        """Parameters as one vector: per layer, row-major weights then bias."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {vec.shape}")
        pos = 0
        for l in range(self.n_layers):
            W = self.weights[l]
            self.weights[l] = vec[pos : pos + W.size].reshape(W.shape)
            pos += W.size
            b = self.biases[l]
            self.biases[l] = vec[pos : pos + b.size].copy()
            pos += b.size
        self._validate()


@dataclass
class DropoutMaskSet:
    """Binary keep vectors for the hidden layers of one network.

    ``per_layer_keep[l]`` has length ``K_{l+1}`` and multiplies the
    activations of hidden layer ``l+1``; the input and output layers are
    never masked.
    """

    per_layer_keep: list

    def __post_init__(self):
        self.per_layer_keep = [np.asarray(z, dtype=float) for z in self.per_layer_keep]
        for z in self.per_layer_keep:
            if z.ndim != 1:
                raise ShapeError("masks must be vectors")
            if not np.isin(z, (0.0, 1.0)).all():
                raise ValueError("mask entries must be exactly 0 or 1")

    def matches(self, net: DenseNetwork) -> bool:
        hidden = net.widths[1:-1]
        return len(self.per_layer_keep) == len(hidden) and all(
            z.shape == (k,) for z, k in zip(self.per_layer_keep, hidden)
        )

    def require_match(self, net: DenseNetwork):
        if not self.matches(net):
            raise ShapeError(
                f"mask shapes {[z.shape for z in self.per_layer_keep]} do not "
                f"match hidden widths {net.widths[1:-1]}"
            )


@dataclass
class GradientSet:
    """Per-layer parameter gradients, shapes mirroring the owning network."""

    weight_grads: list
    bias_grads: list

    def flat(self):
        parts = []
        for gW, gb in zip(self.weight_grads, self.bias_grads):
            parts.append(gW.ravel())
            parts.append(gb)
        return np.concatenate(parts)


@dataclass
class ForwardCache:
    """Intermediate activations recorded by :func:`forward` for backprop."""

    layer_inputs: list = field(repr=False)
    pre_activations: list = field(repr=False)
    masks: DropoutMaskSet | None
    squeeze: bool


def forward(net: DenseNetwork, x, masks: DropoutMaskSet | None = None):
    """Evaluate the network, returning ``(output, cache)``.

    With ``masks`` given, the relu activation of hidden layer ``l`` is
    multiplied elementwise by the layer's keep vector before the next affine
    map; with ``masks=None`` the pass is deterministic.
    """
    x2, squeeze = _as_2d(x)
    if x2.shape[1] != net.widths[0]:
        raise ShapeError(f"input width {x2.shape[1]}, network expects {net.widths[0]}")
    if not np.isfinite(x2).all():
        raise NumericError("non-finite input")
    if masks is not None:
        masks.require_match(net)

    a = x2
    layer_inputs, pre_activations = [], []
    last = net.n_layers - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        layer_inputs.append(a)
        pre = a @ W.T + b
        pre_activations.append(pre)
        if l < last:
            a = np.maximum(pre, 0.0)
            if masks is not None:
                a = a * masks.per_layer_keep[l]
        else:
            a = pre  # identity output
    cache = ForwardCache(layer_inputs, pre_activations, masks, squeeze)
    out = a[0] if squeeze else a
    return out, cache


def backward(
    net: DenseNetwork,
    cache: ForwardCache,
    output_grad,
    masks: DropoutMaskSet | None = None,
) -> GradientSet:
    """Backpropagate ``output_grad`` through a cached forward pass.

    ``masks`` must be the same object (or an equal mask set) used in the
    matching :func:`forward` call. For batched caches the returned gradients
    are accumulated (summed) over the batch rows.
    """
    _check_cache_masks(cache, masks)
    g2, _ = _as_2d(output_grad, "output_grad")
    batch = cache.layer_inputs[0].shape[0]
    if g2.shape != (batch, net.widths[-1]):
        raise ShapeError(
            f"output_grad shape {g2.shape}, expected {(batch, net.widths[-1])}"
        )

    weight_grads = [None] * net.n_layers
    bias_grads = [None] * net.n_layers
    delta = g2
    for l in range(net.n_layers - 1, -1, -1):
        a_in = cache.layer_inputs[l]
        weight_grads[l] = delta.T @ a_in
        bias_grads[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ net.weights[l]
            delta = delta * (cache.pre_activations[l - 1] > 0)
            if masks is not None:
                delta = delta * masks.per_layer_keep[l - 1]
    return GradientSet(weight_grads, bias_grads)


def _check_cache_masks(cache: ForwardCache, masks: DropoutMaskSet | None):
    if cache.masks is None and masks is None:
        return
    if (cache.masks is None) != (masks is None):
        raise MaskMismatchError("cache was built under a different mask regime")
    same = len(cache.masks.per_layer_keep) == len(masks.per_layer_keep) and all(
        np.array_equal(a, b)
        for a, b in zip(cache.masks.per_layer_keep, masks.per_layer_keep)
    )
    if not same:
        raise MaskMismatchError("masks differ from those used in the forward pass")


def apply_mask_to_params(net: DenseNetwork, masks: DropoutMaskSet) -> DenseNetwork:
    """Zero out the parameter rows of dropped units.

    Row ``k`` of the layer-``l`` weight matrix and entry ``k`` of its bias
    are zeroed when the unit's keep entry is 0, so a plain deterministic
    forward pass through the returned network equals ``forward(net, x, masks)``
    for every input.
    """
    masks.require_match(net)
    out = net.copy()
    for l, z in enumerate(masks.per_layer_keep):
        out.weights[l] *= z[:, None]
        out.biases[l] *= z
    return out


def sample_masks(net: DenseNetwork, keep_prob: float, rng) -> DropoutMaskSet:
    """Draw independent Bernoulli(keep_prob) keep vectors for each hidden layer."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    return DropoutMaskSet(
        [
            (rng.random(k) < keep_prob).astype(float)
            for k in net.widths[1:-1]
        ]
    )
