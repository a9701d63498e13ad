"""End-to-end method runners for the binary-label experiment.

Each runner consumes a training set, builds a predictor, and reports
evaluations keyed by split: ``test`` (fresh data at the test coupling),
``heldout_ptr`` (a held-out fifth of the training rows, unweighted) and,
for the two-stage methods, ``heldout_randomized`` (the same held-out rows
under the estimated nuisance-randomized distribution, i.e. weighted, or
held-out generated rows).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import distillation, generative, nn, reweighting
from .analytic import SUM_REP_NOISE_VAR
from .distillation import DistillConfig, DistillResult
from .evaluation import PerfReport, evaluate
from .families import Dataset
from .rng import child_seed, train_val_split

METHODS = ("erm", "reweight_nurd", "generative_nurd", "oracle_linear")


def _default_fit_opt() -> nn.OptConfig:
    return nn.OptConfig(learning_rate=1e-2, epochs=100, batch_size=1000)


@dataclass
class MethodResult:
    rep: nn.MlpModel
    head: nn.MlpModel | None
    reports: dict[str, PerfReport]
    distill: DistillResult | None = None
    weights: np.ndarray | None = None


def run_erm(
    train: Dataset,
    test: Dataset,
    seed: int,
    spec: nn.MlpSpec | None = None,
    opt: nn.OptConfig | None = None,
) -> MethodResult:
    """Plain weighted maximum likelihood on the covariates."""
    spec = spec or nn.MlpSpec((2, 16, 1))
    opt = replace(opt or _default_fit_opt(), seed=child_seed(seed, 10))
    tr, va = train_val_split(len(train), child_seed(seed, 11))
    model = nn.train_binary(
        nn.init(spec, opt.seed),
        train.x[tr],
        train.y[tr],
        train.w[tr],
        opt,
        val=(train.x[va], train.y[va], train.w[va]),
    )
    heldout = train.subset(va)
    reports = {
        "test": evaluate(model, None, test),
        "heldout_ptr": evaluate(model, None, heldout.with_weights(np.ones(len(heldout)))),
    }
    return MethodResult(model, None, reports)


def run_reweight_nurd(
    train: Dataset,
    test: Dataset,
    seed: int,
    k_folds: int = 5,
    weight_spec: nn.MlpSpec | None = None,
    weight_opt: nn.OptConfig | None = None,
    cfg: DistillConfig | None = None,
) -> MethodResult:
    """Cross-fitted importance weights, marginal renormalization, then
    critic-penalized distillation on the weighted data."""
    weight_spec = weight_spec or nn.MlpSpec((1, 16, 1))
    weight_opt = replace(weight_opt or _default_fit_opt(), seed=child_seed(seed, 20))
    cfg = cfg or DistillConfig()

    est = reweighting.crossfit_weights(train, k_folds, weight_spec, weight_opt)
    est = reweighting.renormalize_marginal(est, train.y)
    result = distillation.distill(train, est.weights, cfg, child_seed(seed, 21))

    heldout = train.subset(result.val_indices)
    reports = {
        "test": evaluate(result.rep, result.head, test),
        "heldout_ptr": evaluate(
            result.rep, result.head, heldout.with_weights(np.ones(len(heldout)))
        ),
        "heldout_randomized": evaluate(
            result.rep,
            result.head,
            heldout.with_weights(est.weights[result.val_indices]),
        ),
    }
    return MethodResult(result.rep, result.head, reports, result, est.weights)


def run_generative_nurd(
    train: Dataset,
    test: Dataset,
    seed: int,
    cfg: DistillConfig | None = None,
) -> MethodResult:
    """Fit the covariate conditional, resample with independent (y, z),
    then distill on the synthetic nuisance-randomized data."""
    cfg = cfg or DistillConfig()
    fit_idx, held_idx = train_val_split(len(train), child_seed(seed, 30))
    gen = generative.fit_generator(train.subset(fit_idx))
    randomized = generative.sample_randomized(gen, train, len(train), child_seed(seed, 31))
    result = distillation.distill(randomized, randomized.w, cfg, child_seed(seed, 32))

    heldout_ptr = train.subset(held_idx)
    heldout_rand = randomized.subset(result.val_indices)
    reports = {
        "test": evaluate(result.rep, result.head, test),
        "heldout_ptr": evaluate(result.rep, result.head, heldout_ptr),
        "heldout_randomized": evaluate(result.rep, result.head, heldout_rand),
    }
    return MethodResult(result.rep, result.head, reports, result)


def oracle_linear_predictor() -> tuple[nn.MlpModel, nn.MlpModel]:
    """The summed-covariate rule: threshold x1 + x2 at 1.

    Representation x1 + x2 with the exact nuisance-randomized posterior
    logistic((2r - 2) / 9.01) as the head, so probability 0.5 lands exactly
    at the Bayes threshold.
    """
    rep = nn.MlpModel(nn.MlpSpec((2, 1), output="linear"), np.array([1.0, 1.0, 0.0]))
    head = nn.MlpModel(
        nn.MlpSpec((1, 1), output="logit"),
        np.array([2.0 / SUM_REP_NOISE_VAR, -2.0 / SUM_REP_NOISE_VAR]),
    )
    return rep, head


def run_oracle_linear(train: Dataset, test: Dataset, seed: int) -> MethodResult:
    rep, head = oracle_linear_predictor()
    _, va = train_val_split(len(train), child_seed(seed, 40))
    heldout = train.subset(va)
    reports = {
        "test": evaluate(rep, head, test),
        "heldout_ptr": evaluate(rep, head, heldout),
    }
    return MethodResult(rep, head, reports)
