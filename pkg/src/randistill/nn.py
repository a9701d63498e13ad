"""Minimal feed-forward engine: ReLU MLPs with a scalar output, manual
reverse-mode gradients, weighted binary cross-entropy, and Adam.

Models are immutable values (spec + flat parameter vector); every update
produces a new parameter vector.  All randomness (init, epoch shuffling)
comes from Philox streams keyed by the caller's seed, so training is
bit-reproducible given (seed, data order).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import make_rng

LOGIT_CLIP = 30.0  # probabilities stay strictly inside (0, 1) in float64


class TrainingDivergedError(RuntimeError):
    """Raised when a loss turns non-finite; carries the failing step."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    output: str = "logit"  # "logit" or "linear"; affects only interpretation

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("spec needs at least input and output sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        if self.layer_sizes[-1] != 1:
            raise ValueError("only scalar outputs are supported")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.output not in ("logit", "linear"):
            raise ValueError(f"unsupported output kind {self.output!r}")

    @property
    def n_params(self) -> int:
        return sum(
            n_out * n_in + n_out
            for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )


@dataclass(frozen=True)
class MlpModel:
    spec: MlpSpec
    params: np.ndarray

    def __post_init__(self):
        params = np.asarray(self.params, dtype=float)
        if params.shape != (self.spec.n_params,):
            raise ValueError(
                f"parameter vector has length {params.shape}, spec expects {self.spec.n_params}"
            )
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "params", params)

    def with_params(self, params: np.ndarray) -> "MlpModel":
        return MlpModel(self.spec, params)


@dataclass(frozen=True)
class OptConfig:
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 1000
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.algorithm != "adam":
            raise ValueError(f"unsupported optimizer {self.algorithm!r}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


def _layer_views(spec: MlpSpec, params: np.ndarray):
    """Views (W, b) per layer into the flat parameter vector."""
    views = []
    off = 0
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w = params[off : off + n_out * n_in].reshape(n_out, n_in)
        off += n_out * n_in
        b = params[off : off + n_out]
        off += n_out
        views.append((w, b))
    return views


def init(spec: MlpSpec, seed: int) -> MlpModel:
    """Symmetric fan-in-scaled uniform weights, zero biases."""
    rng = make_rng(seed, "init")
    params = np.empty(spec.n_params)
    off = 0
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = math.sqrt(1.0 / n_in)
        params[off : off + n_out * n_in] = rng.uniform(-bound, bound, size=n_out * n_in)
        off += n_out * n_in
        params[off : off + n_out] = 0.0
        off += n_out
    return MlpModel(spec, params)


def _forward_full(model: MlpModel, x: np.ndarray):
    """Returns (outputs (n,), layer inputs, pre-activations) for backprop."""
    h = np.asarray(x, dtype=float)
    inputs, preacts = [], []
    layers = _layer_views(model.spec, model.params)
    for k, (w, b) in enumerate(layers):
        inputs.append(h)
        a = h @ w.T + b
        preacts.append(a)
        h = np.maximum(a, 0.0) if k < len(layers) - 1 else a
    return h[:, 0], inputs, preacts


def forward_batch(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Scalar outputs for a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.spec.layer_sizes[0]:
        raise ValueError(
            f"input has shape {x.shape}, model expects (n, {model.spec.layer_sizes[0]})"
        )
    return _forward_full(model, x)[0]


def forward(model: MlpModel, x: Sequence[float]) -> float:
    """Scalar output for one input vector."""
    return float(forward_batch(model, np.asarray(x, dtype=float)[None, :])[0])


def _backward_from_cache(model: MlpModel, inputs, preacts, dout: np.ndarray):
    layers = _layer_views(model.spec, model.params)
    grad = np.zeros_like(model.params)
    gviews = _layer_views(model.spec, grad)
    delta = np.asarray(dout, dtype=float)[:, None]
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        gw, gb = gviews[k]
        gw += delta.T @ inputs[k]
        gb += delta.sum(axis=0)
        dh = delta @ w
        if k > 0:
            delta = dh * (preacts[k - 1] > 0.0)
    return grad, dh


def backward_batch(model: MlpModel, x: np.ndarray, dout: np.ndarray):
    """Gradients of sum_i dout_i * out_i w.r.t. params and inputs."""
    _, inputs, preacts = _forward_full(model, np.asarray(x, dtype=float))
    return _backward_from_cache(model, inputs, preacts, dout)


def probabilities(logits: np.ndarray) -> np.ndarray:
    """Sigmoid with the logit clamped to +-30 before exponentiation."""
    clipped = np.clip(logits, -LOGIT_CLIP, LOGIT_CLIP)
    return 1.0 / (1.0 + np.exp(-clipped))


def bce_loss_and_grad(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Weighted mean binary cross-entropy from logits, log-sum-exp form.

    Normalizes by the batch weight sum; an all-zero weight vector yields
    loss 0 with zero gradient.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total == 0.0:
        return 0.0, np.zeros_like(logits)
    # softplus(l) - y*l, computed stably for either sign of l
    ce = np.maximum(logits, 0.0) - labels * logits + np.log1p(np.exp(-np.abs(logits)))
    loss = float((weights * ce).sum() / total)
    dlogits = weights * (probabilities(logits) - labels) / total
    return loss, dlogits


class Adam:
    """Adam state for one flat parameter vector."""

    def __init__(self, n_params: int, opt: OptConfig):
        self.opt = opt
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        o = self.opt
        if o.weight_decay:
            grad = grad + o.weight_decay * params
        self.t += 1
        self.m = o.beta1 * self.m + (1.0 - o.beta1) * grad
        self.v = o.beta2 * self.v + (1.0 - o.beta2) * grad * grad
        mhat = self.m / (1.0 - o.beta1**self.t)
        vhat = self.v / (1.0 - o.beta2**self.t)
        return params - o.learning_rate * mhat / (np.sqrt(vhat) + o.eps)


def batch_indices(n: int, batch_size: int, rng: np.random.Generator):
    """Seeded shuffle, then contiguous slices (last one may be short)."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def train_binary(
    model: MlpModel,
    inputs: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    opt: OptConfig,
    val: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> MlpModel:
    """Minimize weighted binary cross-entropy with Adam.

    When ``val=(inputs, labels, weights)`` is given, the parameters with the
    best validation loss across epochs are returned instead of the final
    ones.  Raises :class:`TrainingDivergedError` on a non-finite loss.
    """
    inputs = np.asarray(inputs, dtype=float)
    labels = np.asarray(labels, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not (inputs.shape[0] == labels.shape[0] == weights.shape[0]):
        raise ValueError("inputs, labels and weights must have equal row counts")
    if not np.all(weights > 0):
        raise ValueError("training weights must be strictly positive")

    rng = make_rng(opt.seed, "shuffle")
    params = model.params.copy()
    adam = Adam(params.size, opt)
    best_params, best_val = params.copy(), math.inf
    step = 0
    for epoch in range(opt.epochs):
        for idx in batch_indices(inputs.shape[0], opt.batch_size, rng):
            step += 1
            work = model.with_params(params)
            logits, layer_in, preacts = _forward_full(work, inputs[idx])
            loss, dlogits = bce_loss_and_grad(logits, labels[idx], weights[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at step {step} (epoch {epoch})", step
                )
            grad, _ = _backward_from_cache(work, layer_in, preacts, dlogits)
            params = adam.step(params, grad)
        if val is not None:
            vlogits = forward_batch(model.with_params(params), val[0])
            vloss, _ = bce_loss_and_grad(vlogits, val[1], val[2])
            if vloss < best_val:
                best_val, best_params = vloss, params.copy()
    return model.with_params(best_params if val is not None else params)


@dataclass
class GradCheckResult:
    passed: bool
    worst_index: int
    worst_rel_err: float

    def __bool__(self) -> bool:
        return self.passed


def grad_check(
    model: MlpModel,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    grad_fn=None,
) -> GradCheckResult:
    """Compare analytic loss gradients against central finite differences.

    ``batch`` is (inputs, labels, weights); ``grad_fn`` may override the
    analytic gradient (negative-control hook for tests).  Fails with the
    index of the worst coordinate.
    """
    inputs, labels, weights = (np.asarray(v, dtype=float) for v in batch)
    if inputs.shape[0] > 32:
        raise ValueError("grad_check expects a small batch (<= 32 rows)")

    def loss_at(params: np.ndarray) -> float:
        logits = forward_batch(model.with_params(params), inputs)
        return bce_loss_and_grad(logits, labels, weights)[0]

    if grad_fn is None:
        logits = forward_batch(model, inputs)
        _, dlogits = bce_loss_and_grad(logits, labels, weights)
        analytic, _ = backward_batch(model, inputs, dlogits)
    else:
        analytic = np.asarray(grad_fn(model, inputs, labels, weights), dtype=float)

    worst_idx, worst_err = -1, 0.0
    params = model.params
    for i in range(params.size):
        shifted = params.copy()
        shifted[i] = params[i] + step
        up = loss_at(shifted)
        shifted[i] = params[i] - step
        down = loss_at(shifted)
        numeric = (up - down) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        err = abs(analytic[i] - numeric) / denom
        if err > worst_err:
            worst_idx, worst_err = i, err
    return GradCheckResult(worst_err <= tolerance, worst_idx, worst_err)


def save_model(model: MlpModel, path) -> None:
    """JSON round-trip: spec plus flat parameter list."""
    doc = {
        "layer_sizes": list(model.spec.layer_sizes),
        "activation": model.spec.activation,
        "output": model.spec.output,
        "params": model.params.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> MlpModel:
    with open(path) as fh:
        doc = json.load(fh)
    spec = MlpSpec(tuple(doc["layer_sizes"]), doc["activation"], doc["output"])
    return MlpModel(spec, np.asarray(doc["params"], dtype=float))
