"""Stage 1 by importance weighting: cross-fitted label-given-nuisance models
and the marginal corrections applied to the resulting weights.

Each sample's weight ``p_hat(y) / p_alpha(y | z)`` comes from a model that
never saw that sample: the data are split into K folds and fold i's weights
are produced by a model trained (with a 20% early-stopping slice) on the
other folds only.  Training a flexible model on its own evaluation points
lets it memorize ``p(y | z) ~ 1`` and the weights collapse to the label
marginal, which leaves the nuisance-label dependence intact; cross-fitting
is the guard against that failure.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .families import Dataset, FamilyError
from .rng import child_seed, make_rng, train_val_split

# Bounded-density assumption licenses clamping; silent infinities are worse.
PROB_FLOOR = 1e-6
WEIGHT_BOUNDS = (1e-3, 1e3)


class ReweightingError(ValueError):
    pass


@dataclass
class WeightEstimate:
    """Cross-fitted weights aligned to a dataset."""

    weights: np.ndarray
    fold_of: np.ndarray
    fold_models: list[nn.MlpModel]
    label_marginal: float
    n_clamped_prob: int = 0
    n_clamped_weight: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)) or not np.all(self.weights > 0):
            raise ReweightingError("weights must be finite and strictly positive")
        counts = np.bincount(self.fold_of, minlength=len(self.fold_models))
        if self.fold_of.shape != self.weights.shape or counts.sum() != self.weights.size:
            raise ReweightingError("fold assignment must cover every index exactly once")


def fold_assignment(n: int, k: int, seed: int) -> np.ndarray:
    """Seeded permutation, then contiguous blocks; remainder joins the last fold."""
    perm = make_rng(seed, "fold").permutation(n)
    fold_of = np.empty(n, dtype=int)
    size = n // k
    for i in range(k):
        stop = (i + 1) * size if i < k - 1 else n
        fold_of[perm[i * size : stop]] = i
    return fold_of


def crossfit_weights(
    data: Dataset, k: int, spec: nn.MlpSpec, opt: nn.OptConfig
) -> WeightEstimate:
    """Cross-fitted estimate of ``p_hat(y) / p(y | z)`` for every sample."""
    n = len(data)
    if k < 2:
        raise ReweightingError("need at least 2 folds")
    if n < 10 * k:
        raise ReweightingError(f"dataset of size {n} is too small for {k} folds")

    fold_of = fold_assignment(n, k, opt.seed)
    label_marginal = float(data.y.mean())
    p_label = np.where(data.y == 1.0, label_marginal, 1.0 - label_marginal)

    weights = np.empty(n)
    models: list[nn.MlpModel] = []
    n_clamped_prob = 0
    for i in range(k):
        held = fold_of == i
        rest = np.flatnonzero(~held)
        fold_opt = replace(opt, seed=child_seed(opt.seed, i))
        tr, va = train_val_split(rest.size, fold_opt.seed)
        model = nn.train_binary(
            nn.init(spec, fold_opt.seed),
            data.z[rest[tr]],
            data.y[rest[tr]],
            data.w[rest[tr]],
            fold_opt,
            val=(data.z[rest[va]], data.y[rest[va]], data.w[rest[va]]),
        )
        models.append(model)
        p1 = nn.probabilities(nn.forward_batch(model, data.z[held]))
        p_y = np.where(data.y[held] == 1.0, p1, 1.0 - p1)
        n_clamped_prob += int((p_y < PROB_FLOOR).sum())
        p_y = np.maximum(p_y, PROB_FLOOR)
        weights[held] = p_label[held] / p_y

    lo, hi = WEIGHT_BOUNDS
    n_clamped_weight = int(((weights < lo) | (weights > hi)).sum())
    np.clip(weights, lo, hi, out=weights)
    return WeightEstimate(
        weights, fold_of, models, label_marginal, n_clamped_prob, n_clamped_weight
    )


def renormalize_marginal(est: WeightEstimate, labels: np.ndarray) -> WeightEstimate:
    """Rescale per label class so the weighted label marginal matches the
    empirical one; total weighted mass is preserved."""
    labels = np.asarray(labels, dtype=float)
    if labels.shape != est.weights.shape:
        raise ReweightingError("labels must align with the weight vector")
    pos = labels == 1.0
    total = est.weights.sum()
    mass1 = est.weights[pos].sum()
    mass0 = total - mass1
    if mass1 == 0.0 or mass0 == 0.0:
        raise ReweightingError("a label class carries zero weight")
    p1 = float(labels.mean())
    factors = np.where(pos, p1 * total / mass1, (1.0 - p1) * total / mass0)
    return WeightEstimate(
        est.weights * factors,
        est.fold_of,
        est.fold_models,
        est.label_marginal,
        est.n_clamped_prob,
        est.n_clamped_weight,
    )


def label_shift_adjust(data: Dataset, target_marginal: float) -> Dataset:
    """Multiply weights by target(y) / empirical(y).

    Downstream estimation then targets the family whose label marginal is
    ``target_marginal`` instead of the training one.
    """
    if not 0.0 < target_marginal < 1.0:
        raise ReweightingError("target marginal must lie strictly inside (0, 1)")
    p1 = float(data.y.mean())
    if p1 == 0.0 or p1 == 1.0:
        raise FamilyError("a label class is absent from the dataset")
    ratio = np.where(data.y == 1.0, target_marginal / p1, (1.0 - target_marginal) / (1.0 - p1))
    return data.with_weights(data.w * ratio)


def weighted_correlation(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    """Weighted Pearson correlation."""
    w = np.asarray(w, dtype=float)
    total = w.sum()
    mu_u = (w * u).sum() / total
    mu_v = (w * v).sum() / total
    cov = (w * (u - mu_u) * (v - mu_v)).sum() / total
    var_u = (w * (u - mu_u) ** 2).sum() / total
    var_v = (w * (v - mu_v) ** 2).sum() / total
    return float(cov / np.sqrt(var_u * var_v))
