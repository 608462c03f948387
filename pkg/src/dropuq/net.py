"""Fully-connected classifier with per-weight Bernoulli masks.

Masks are drawn per connection (not per unit) and never touch biases. Whenever
masks are sampled, kept weights are rescaled by 1/(1-p), which makes masking
unbiased at the logit level and keeps MC-test expectations comparable with
mask-off inference. Every mask entry is a pure function of
(seed, pass_index, layer, row, column), so sampling is reproducible and
schedule-independent.

Also houses the synthetic imbalanced blob dataset used by the demo pipeline,
training via mini-batch Adam on an asymmetric weighted cross-entropy, and
plain input-gradient saliency.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError, ParseError, ValidationError
from .mc_store import McPredictionSet
from .rng import (
    DATA_STREAM,
    INIT_STREAM,
    MASK_STREAM,
    SHUFFLE_STREAM,
    TRAIN_MASK_STREAM,
    derive_rng,
)

CE_EPSILON = 1e-12

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


@dataclass(frozen=True)
class DropweightNet:
    """Immutable network state: sizes, parameters, drop rate, class weights."""

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    drop_rate: float
    class_weights: np.ndarray
    rng_seed: int

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValidationError("need at least input and output layers")
        if any(s < 1 for s in sizes):
            raise ValidationError(f"layer sizes must be positive, got {sizes}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValidationError(f"drop_rate must lie in [0, 1), got {self.drop_rate}")
        alpha = np.asarray(self.class_weights, dtype=np.float64)
        if alpha.shape != (sizes[-1],) or (alpha <= 0).any():
            raise ValidationError(f"class_weights must be {sizes[-1]} positive reals")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValidationError("one weight matrix and bias vector per layer transition")
        weights, biases = [], []
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (sizes[l + 1], sizes[l]):
                raise ValidationError(f"layer {l} weights must have shape {(sizes[l + 1], sizes[l])}")
            if b.shape != (sizes[l + 1],):
                raise ValidationError(f"layer {l} bias must have shape {(sizes[l + 1],)}")
            w.setflags(write=False)
            b.setflags(write=False)
            weights.append(w)
            biases.append(b)
        alpha = alpha.copy()
        alpha.setflags(write=False)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "biases", tuple(biases))
        object.__setattr__(self, "class_weights", alpha)
        object.__setattr__(self, "rng_seed", int(self.rng_seed))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]


def init_network(layer_sizes, drop_rate=0.3, class_weights=None, seed=0) -> DropweightNet:
    """He-initialized weights, zero biases; deterministic given the seed."""
    sizes = tuple(int(s) for s in layer_sizes)
    rng = derive_rng(seed, INIT_STREAM)
    weights = tuple(
        rng.standard_normal((sizes[l + 1], sizes[l])) * math.sqrt(2.0 / sizes[l])
        for l in range(len(sizes) - 1)
    )
    biases = tuple(np.zeros(sizes[l + 1]) for l in range(len(sizes) - 1))
    if class_weights is None:
        class_weights = np.ones(sizes[-1])
    return DropweightNet(sizes, weights, biases, float(drop_rate), class_weights, seed)


def _bernoulli_mask(shape, drop_rate, *key) -> np.ndarray:
    rng = derive_rng(*key)
    return (rng.random(shape) >= drop_rate).astype(np.float64)


def sample_masks(net: DropweightNet, seed: int, pass_index: int) -> list[np.ndarray]:
    """Per-layer keep masks (1 = keep) for one stochastic pass."""
    if pass_index < 0:
        raise ValidationError("pass_index must be non-negative")
    return [
        _bernoulli_mask(w.shape, net.drop_rate, seed, MASK_STREAM, pass_index, l)
        for l, w in enumerate(net.weights)
    ]


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _masked_weights(net: DropweightNet, masks) -> list[np.ndarray]:
    if masks is None:
        return list(net.weights)
    scale = 1.0 / (1.0 - net.drop_rate)
    return [w * m * scale for w, m in zip(net.weights, masks)]


def _forward_trace(weights, biases, x):
    """All layer activations for a batch; hidden layers ReLU, output softmax.

    Runs with numpy warnings silenced: divergent weights produce inf/nan here,
    and the callers turn non-finite results into NumericalError themselves.
    """
    activations = [x]
    pre = []
    last = len(weights) - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for l, (w, b) in enumerate(zip(weights, biases)):
            z = activations[-1] @ w.T + b
            pre.append(z)
            activations.append(np.maximum(z, 0.0) if l < last else _softmax_rows(z))
    return activations, pre


def forward(net: DropweightNet, x, masks=None) -> np.ndarray:
    """Softmax output for a single d-vector or an (N, d) batch.

    With ``masks`` (from :func:`sample_masks`) each weight is kept or dropped
    per the mask and rescaled by 1/(1-p); without, weights are used as-is.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValidationError("input must be finite")
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ValidationError(f"input dimension {batch.shape[-1]} does not match net input {net.input_dim}")
    probs = _forward_trace(_masked_weights(net, masks), net.biases, batch)[0][-1]
    return probs[0] if single else probs


def weighted_ce_loss(net_output, label: int, class_weights) -> float:
    """Asymmetric cross-entropy for one prediction: -alpha_label * ln(p_label + eps)."""
    p = np.asarray(net_output, dtype=np.float64)
    alpha = np.asarray(class_weights, dtype=np.float64)
    if not 0 <= label < len(p):
        raise ValidationError(f"label {label} out of range for {len(p)} classes")
    if len(alpha) != len(p):
        raise ValidationError("class_weights length must match the output")
    return max(0.0, float(-alpha[label] * np.log(p[label] + CE_EPSILON)))


def _batch_loss_and_grads(weights, biases, masks, scale, class_weights, x, y):
    """Mean weighted CE over the batch and its gradients wrt raw weights/biases.

    Masks are treated as constants: the gradient reaching a dropped weight is
    zero, kept weights see the 1/(1-p) rescale.
    """
    masked = weights if masks is None else [w * m * scale for w, m in zip(weights, masks)]
    activations, pre = _forward_trace(masked, biases, x)
    probs = activations[-1]
    batch = len(y)
    rows = np.arange(batch)
    # silenced like the forward pass: nan/inf reaching here becomes a
    # non-finite loss, which train() rejects
    with np.errstate(over="ignore", invalid="ignore"):
        p_label = probs[rows, y]
        loss = float(np.maximum(0.0, -class_weights[y] * np.log(p_label + CE_EPSILON)).mean())

        coef = class_weights[y] * p_label / (p_label + CE_EPSILON) / batch
        dz = coef[:, None] * probs
        dz[rows, y] -= coef
        grads_w = [None] * len(weights)
        grads_b = [None] * len(weights)
        for l in range(len(weights) - 1, -1, -1):
            gw = dz.T @ activations[l]
            if masks is not None:
                gw *= masks[l] * scale
            grads_w[l] = gw
            grads_b[l] = dz.sum(axis=0)
            if l > 0:
                dz = (dz @ masked[l]) * (pre[l - 1] > 0)
    return loss, grads_w, grads_b


def loss_and_gradients(net: DropweightNet, inputs, labels, masks=None):
    """Batch loss and analytic parameter gradients, for training and gradient checks."""
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValidationError("inputs must be (N, d) matching the net input size")
    if (y < 0).any() or (y >= net.num_classes).any():
        raise ValidationError("labels out of range")
    scale = 1.0 / (1.0 - net.drop_rate)
    return _batch_loss_and_grads(list(net.weights), list(net.biases), masks, scale,
                                 net.class_weights, x, y)


@dataclass(frozen=True)
class SyntheticDataset:
    """Gaussian-blob classification data with explicit per-class counts."""

    inputs: np.ndarray
    labels: np.ndarray
    class_counts: tuple[int, ...]

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        counts = tuple(int(k) for k in self.class_counts)
        if any(k < 1 for k in counts):
            raise ValidationError("every class must be present")
        if sum(counts) != len(labels) or len(labels) != len(inputs):
            raise ValidationError("class_counts must sum to the number of items")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_counts", counts)

    @property
    def num_items(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_counts)


def generate_synthetic(seed: int, n_per_class, d: int, overlap: float) -> SyntheticDataset:
    """Gaussian blobs, one per class, with ``overlap`` scaling the noise.

    Class centers sit on a regular simplex (the standard basis) when d >= C,
    otherwise on a circle in the first two coordinates; samples are
    center + overlap * N(0, I). overlap 0 collapses each class to a point, so
    the classes are perfectly separable; larger values mix them.
    """
    counts = [int(k) for k in n_per_class]
    num_classes = len(counts)
    if num_classes < 2:
        raise ValidationError("need at least 2 classes")
    if d < 2:
        raise ValidationError("need input dimension >= 2")
    if any(k < 1 for k in counts):
        raise ValidationError("every n_per_class entry must be at least 1")
    if overlap < 0:
        raise ValidationError("overlap must be non-negative")

    centers = np.zeros((num_classes, d))
    if d >= num_classes:
        centers[np.arange(num_classes), np.arange(num_classes)] = 1.0
    else:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        centers[:, 0] = np.cos(angles)
        centers[:, 1] = np.sin(angles)

    rng = derive_rng(seed, DATA_STREAM)
    inputs = np.concatenate([
        centers[c] + overlap * rng.standard_normal((counts[c], d))
        for c in range(num_classes)
    ])
    labels = np.repeat(np.arange(num_classes), counts)
    return SyntheticDataset(inputs, labels, tuple(counts))


@dataclass(frozen=True)
class TrainResult:
    net: DropweightNet
    epoch_losses: tuple[float, ...]


def train(net: DropweightNet, data: SyntheticDataset, epochs: int, batch_size: int,
          lr: float, seed: int, lr_decay=None, decay_patience: int = 3) -> TrainResult:
    """Mini-batch Adam on the weighted cross-entropy with fresh masks per batch.

    Shuffling and masks derive from ``seed``; the run is bit-reproducible.
    ``lr_decay`` optionally multiplies the learning rate when the epoch loss
    has not improved for ``decay_patience`` epochs.
    """
    if epochs < 1:
        raise ValidationError("epochs must be at least 1")
    if batch_size < 1:
        raise ValidationError("batch_size must be at least 1")
    if lr < 0:
        raise ValidationError("learning rate must be non-negative")
    if data.inputs.shape[1] != net.input_dim or data.num_classes > net.num_classes:
        raise ValidationError("dataset does not match the network dimensions")

    weights = [w.copy() for w in net.weights]
    biases = [b.copy() for b in net.biases]
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]

    x, y = data.inputs, data.labels
    n = len(y)
    alpha = net.class_weights
    scale = 1.0 / (1.0 - net.drop_rate)
    shuffle_rng = derive_rng(seed, SHUFFLE_STREAM)

    cur_lr = float(lr)
    best = math.inf
    stall = 0
    step = 0
    epoch_losses = []
    for epoch in range(epochs):
        perm = shuffle_rng.permutation(n)
        running = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            masks = [
                _bernoulli_mask(w.shape, net.drop_rate, seed, TRAIN_MASK_STREAM, step, l)
                for l, w in enumerate(weights)
            ]
            loss, gw, gb = _batch_loss_and_grads(weights, biases, masks, scale, alpha,
                                                 x[idx], y[idx])
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}; "
                                     f"reduce the learning rate")
            step += 1
            beta1_t = 1.0 - ADAM_BETA1 ** step
            beta2_t = 1.0 - ADAM_BETA2 ** step
            for l in range(len(weights)):
                for param, grad, m, v in ((weights[l], gw[l], m_w[l], v_w[l]),
                                          (biases[l], gb[l], m_b[l], v_b[l])):
                    m *= ADAM_BETA1
                    m += (1.0 - ADAM_BETA1) * grad
                    v *= ADAM_BETA2
                    v += (1.0 - ADAM_BETA2) * grad * grad
                    param -= cur_lr * (m / beta1_t) / (np.sqrt(v / beta2_t) + ADAM_EPSILON)
            running += loss * len(idx)
        epoch_loss = running / n
        epoch_losses.append(epoch_loss)
        if epoch_loss < best - 1e-12:
            best = epoch_loss
            stall = 0
        else:
            stall += 1
            if lr_decay is not None and stall >= decay_patience:
                cur_lr *= lr_decay
                stall = 0

    trained = replace(net, weights=tuple(weights), biases=tuple(biases))
    return TrainResult(net=trained, epoch_losses=tuple(epoch_losses))


def mc_predict(net: DropweightNet, inputs, num_passes: int, seed: int,
               item_ids=None) -> McPredictionSet:
    """T stochastic forward passes per item, masks keyed by (seed, pass index)."""
    if num_passes < 1:
        raise ValidationError("need at least one MC pass")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValidationError("inputs must be (N, d) matching the net input size")
    if item_ids is None:
        item_ids = tuple(f"item_{i:05d}" for i in range(len(x)))
    probs = np.empty((num_passes, len(x), net.num_classes))
    for t in range(num_passes):
        probs[t] = forward(net, x, masks=sample_masks(net, seed, t))
    return McPredictionSet(tuple(item_ids), probs)


def input_gradient_saliency(net: DropweightNet, x, target_class: int) -> np.ndarray:
    """Gradient of ln p(target_class) wrt the input, masks off."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValidationError(f"expected a length-{net.input_dim} input vector")
    if not np.isfinite(x).all():
        raise ValidationError("input must be finite")
    if not 0 <= target_class < net.num_classes:
        raise ValidationError(f"target_class {target_class} out of range")
    weights = list(net.weights)
    activations, pre = _forward_trace(weights, net.biases, x[None, :])
    probs = activations[-1]
    dz = -probs.copy()
    dz[0, target_class] += 1.0
    for l in range(len(weights) - 1, 0, -1):
        dz = (dz @ weights[l]) * (pre[l - 1] > 0)
    return (dz @ weights[0])[0]


def save_checkpoint(net: DropweightNet, path) -> None:
    """JSON checkpoint with decimal-encoded parameters; round-trips exactly."""
    payload = {
        "layer_sizes": list(net.layer_sizes),
        "drop_rate": net.drop_rate,
        "class_weights": net.class_weights.tolist(),
        "rng_seed": net.rng_seed,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> DropweightNet:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid checkpoint JSON: {exc}") from None
    try:
        return DropweightNet(
            layer_sizes=tuple(payload["layer_sizes"]),
            weights=tuple(np.array(w) for w in payload["weights"]),
            biases=tuple(np.array(b) for b in payload["biases"]),
            drop_rate=payload["drop_rate"],
            class_weights=np.array(payload["class_weights"]),
            rng_seed=payload["rng_seed"],
        )
    except KeyError as exc:
        raise ParseError(f"{path}: checkpoint missing field {exc}") from None


def save_features(item_ids, inputs, path) -> None:
    """Feature CSV: header item_id,x_0..x_{d-1}, values at 17 significant digits."""
    inputs = np.asarray(inputs, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id"] + [f"x_{j}" for j in range(inputs.shape[1])])
        for item, row in zip(item_ids, inputs):
            writer.writerow([item] + [f"{v:.17g}" for v in row])


def load_features(path) -> tuple[tuple[str, ...], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "item_id" or header[1:] != [f"x_{j}" for j in range(len(header) - 1)]:
            raise ParseError(f"{path}: header must be item_id,x_0,...,x_{{d-1}}")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-numeric feature") from None
            ids.append(row[0])
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return tuple(ids), np.array(rows)
