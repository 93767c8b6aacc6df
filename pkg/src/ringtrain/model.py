"""Minimal trainable MLP with real gradients.

Dense layers (no bias) with ReLU activations and a softmax cross-entropy head.
Weights and gradients are float32 so payload sizes match what the collectives
move around; gradient-check tooling can rebuild the same arithmetic in float64.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import StaleCacheError


@dataclass
class GradientSet:
    """Ordered per-layer gradient chunks, one array per parametric layer."""

    chunks: list[np.ndarray]

    def __iter__(self):
        return iter(self.chunks)

    def __len__(self) -> int:
        return len(self.chunks)

    def total_elems(self) -> int:
        return sum(c.size for c in self.chunks)


@dataclass
class ForwardCache:
    """Activations retained by forward() for the matching backward()."""

    model: "RealModel"
    inputs: list[np.ndarray]   # input to each dense layer
    masks: list[np.ndarray]    # ReLU masks for hidden layers
    probs: np.ndarray          # softmax outputs
    targets: np.ndarray        # one-hot / soft target distribution
    batch: int


def _as_targets(labels: np.ndarray, classes: int, dtype) -> np.ndarray:
    """Accept integer class indices or an explicit (soft) target matrix."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        if np.issubdtype(labels.dtype, np.floating):
            raise ValueError("1-D labels must be integer class indices")
        onehot = np.zeros((labels.shape[0], classes), dtype=dtype)
        onehot[np.arange(labels.shape[0]), labels] = 1.0
        return onehot
    if labels.ndim == 2 and labels.shape[1] == classes:
        return labels.astype(dtype, copy=False)
    raise ValueError(f"labels shape {labels.shape} incompatible with {classes} classes")


class RealModel:
    """MLP defined by a dims chain, e.g. [4, 8, 3] = Dense(4,8)+ReLU+Dense(8,3)+softmax.

    Initialization is uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)),
    drawn from a generator seeded with ``seed``, so identical seeds give
    bit-identical weights.
    """

    def __init__(self, dims: list[int], seed: int, dtype=np.float32):
        if len(dims) < 2:
            raise ValueError("dims must name at least an input and an output size")
        self.dims = list(dims)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            r = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-r, r, size=(fan_in, fan_out))
            self.weights.append(w.astype(self.dtype))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def num_classes(self) -> int:
        return self.dims[-1]

    def param_count(self) -> int:
        return sum(w.size for w in self.weights)

    def forward(self, inputs: np.ndarray, labels: np.ndarray) -> tuple[float, ForwardCache]:
        """Run the network and return (mean cross-entropy loss, cache)."""
        x = np.asarray(inputs, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise ValueError(f"inputs shape {x.shape} does not match input dim {self.dims[0]}")
        batch = x.shape[0]
        if batch < 1:
            raise ValueError("batch must be non-empty")
        targets = _as_targets(labels, self.num_classes, self.dtype)
        if targets.shape[0] != batch:
            raise ValueError(f"batch mismatch: {batch} inputs vs {targets.shape[0]} labels")

        layer_inputs, masks = [], []
        for i, w in enumerate(self.weights):
            layer_inputs.append(x)
            x = x @ w
            if i < self.num_layers - 1:
                mask = x > 0
                x = x * mask
                masks.append(mask)

        # stable softmax + cross entropy, mean over the batch
        shifted = x - x.max(axis=1, keepdims=True)
        expx = np.exp(shifted)
        probs = expx / expx.sum(axis=1, keepdims=True)
        eps = np.finfo(self.dtype).tiny
        loss = float(-(targets * np.log(probs + eps)).sum() / batch)

        cache = ForwardCache(self, layer_inputs, masks, probs, targets, batch)
        return loss, cache

    def backward(self, cache: ForwardCache) -> GradientSet:
        """Gradients of the mean loss w.r.t. every weight matrix."""
        if cache is None or cache.model is not self:
            raise StaleCacheError("backward() needs the cache from this model's forward()")
        delta = (cache.probs - cache.targets) / cache.batch
        delta = delta.astype(self.dtype, copy=False)
        grads: list[np.ndarray] = [None] * self.num_layers
        for i in range(self.num_layers - 1, -1, -1):
            grads[i] = cache.inputs[i].T @ delta
            if i > 0:
                delta = (delta @ self.weights[i].T) * cache.masks[i - 1]
        return GradientSet(grads)

    def sgd_update(self, grads: GradientSet, lr: float, weight_decay: float = 0.0) -> None:
        """w <- w - lr * (g + weight_decay * w), elementwise."""
        if len(grads) != self.num_layers:
            raise ValueError(f"expected {self.num_layers} gradient chunks, got {len(grads)}")
        for w, g in zip(self.weights, grads):
            if g.shape != w.shape:
                raise ValueError(f"gradient shape {g.shape} does not match weight {w.shape}")
            w -= (lr * (g + weight_decay * w)).astype(self.dtype, copy=False)

    def clone(self, dtype=None) -> "RealModel":
        """Copy of this model, optionally re-cast (float64 shadow for checks)."""
        other = RealModel(self.dims, self.seed, dtype=dtype or self.dtype)
        other.weights = [w.astype(other.dtype) for w in self.weights]
        return other

    def weight_checksum(self) -> str:
        h = hashlib.sha256()
        for w in self.weights:
            h.update(np.ascontiguousarray(w).tobytes())
        return h.hexdigest()


def finite_difference_check(model: RealModel, inputs: np.ndarray, labels: np.ndarray,
                            step: float = 1e-3) -> float:
    """Max relative error of backward() against central differences.

    Both paths run in float64 on a shadow copy so the comparison is not
    drowned by float32 rounding.
    """
    shadow = model.clone(dtype=np.float64)
    x = np.asarray(inputs, dtype=np.float64)
    _, cache = shadow.forward(x, labels)
    analytic = shadow.backward(cache)

    worst = 0.0
    for li, w in enumerate(shadow.weights):
        numeric = np.zeros_like(w)
        flat = w.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            lp, _ = shadow.forward(x, labels)
            flat[j] = orig - step
            lm, _ = shadow.forward(x, labels)
            flat[j] = orig
            num_flat[j] = (lp - lm) / (2.0 * step)
        denom = np.maximum(np.abs(numeric), np.abs(analytic.chunks[li]))
        denom = np.maximum(denom, 1e-8)
        rel = np.abs(numeric - analytic.chunks[li]) / denom
        worst = max(worst, float(rel.max()))
    return worst
