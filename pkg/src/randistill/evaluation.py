"""Performance measurement: accuracy, mean log-likelihood, and (where an
analytic conditional exists) Monte-Carlo KL-based performance.

Performance of a predictor is the negative expected KL divergence from the
true conditional under the test distribution; it equals expected test
log-likelihood up to a constant of the test distribution, so log-likelihood
differences between predictors estimate performance differences directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import analytic, nn
from .families import Dataset, FamilySpec, sample_family
from .rng import child_seed, make_rng


class EvaluationError(ValueError):
    pass


@dataclass
class PerfReport:
    accuracy: float
    mean_loglik: float
    kl_perf: float | None
    n_eval: int
    stderr: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise EvaluationError(f"accuracy out of range: {self.accuracy}")
        if self.stderr < 0.0:
            raise EvaluationError("stderr must be nonnegative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def predict_proba(rep: nn.MlpModel, head: nn.MlpModel | None, x: np.ndarray) -> np.ndarray:
    """p(y=1 | x) of a representation/head pair.

    With ``head=None`` the representation itself is the classifier (its
    scalar output is the logit).
    """
    out = nn.forward_batch(rep, x)
    if head is not None:
        out = nn.forward_batch(head, out[:, None])
    return nn.probabilities(out)


def evaluate(rep: nn.MlpModel, head: nn.MlpModel | None, test: Dataset) -> PerfReport:
    """Weighted accuracy and log-likelihood of a binary predictor.

    Probabilities of exactly 0.5 predict class 1.  ``kl_perf`` is filled
    for the discrete family (whose posterior table is analytic); for the
    continuous family see :func:`gaussian_kl_perf`, which scores the
    Gaussian-posterior predictors that family calls for.
    """
    if len(test) == 0:
        raise EvaluationError("empty test set")
    p = predict_proba(rep, head, test.x)
    w = test.w
    total = w.sum()
    correct = ((p >= 0.5).astype(float) == test.y).astype(float)
    accuracy = float((w * correct).sum() / total)
    loglik = np.where(test.y == 1.0, np.log(p), np.log1p(-p))
    mean_loglik = float((w * loglik).sum() / total)
    # Within-run binomial-style error of the weighted mean.
    stderr = float(np.sqrt((w**2 * (correct - accuracy) ** 2).sum()) / total)

    kl_perf = None
    if test.spec.kind == "GapDiscrete":
        f = analytic.gap_posterior(test.spec.rho)
        truth = f[test.x[:, 0].astype(int), test.x[:, 1].astype(int)]
        kl = _bernoulli_kl(truth, p)
        kl_perf = float(-(w * kl).sum() / total)
    return PerfReport(accuracy, mean_loglik, kl_perf, len(test), stderr)


def _bernoulli_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    q = np.clip(q, 1e-12, 1.0 - 1e-12)
    return p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q))


def gaussian_kl_perf(
    predictor: analytic.GaussianPosterior,
    a_test: float,
    sigma2: float,
    n: int,
    seed: int,
) -> tuple[float, float]:
    """Monte-Carlo (-E KL(true posterior || predictor), stderr) under the
    coupling-``a_test`` analysis model of the continuous family."""
    truth = analytic.continuous_posterior(a_test, sigma2)
    _, x = analytic.sample_analysis_family(a_test, sigma2, n, seed)
    kl = _gaussian_kl_pointwise(truth, predictor, x)
    return float(-kl.mean()), float(kl.std(ddof=1) / math.sqrt(n))


def marginal_kl(a_test: float, sigma2: float, n: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo (E KL(true posterior || N(0,1) label marginal), stderr)."""
    truth = analytic.continuous_posterior(a_test, sigma2)
    _, x = analytic.sample_analysis_family(a_test, sigma2, n, seed)
    m = truth.mean(x)
    kl = 0.5 * (truth.var + m * m - 1.0 - math.log(truth.var))
    return float(kl.mean()), float(kl.std(ddof=1) / math.sqrt(n))


def _gaussian_kl_pointwise(
    p: analytic.GaussianPosterior, q: analytic.GaussianPosterior, x: np.ndarray
) -> np.ndarray:
    diff = p.mean(x) - q.mean(x)
    return 0.5 * (math.log(q.var / p.var) + (p.var + diff * diff) / q.var - 1.0)


def sweep(
    rep: nn.MlpModel,
    head: nn.MlpModel | None,
    family_kind: str,
    a_values,
    n_per_point: int,
    seed: int,
) -> list[PerfReport]:
    """Evaluate on fresh test sets across nuisance-label couplings, one
    child of the common seed stream per grid point."""
    a_values = list(a_values)
    if not a_values:
        raise EvaluationError("empty coupling grid")
    reports = []
    for i, a in enumerate(a_values):
        spec = FamilySpec(family_kind, a=float(a))
        test = sample_family(spec, n_per_point, child_seed(seed, i))
        reports.append(evaluate(rep, head, test))
    return reports


def binned_posterior(r: np.ndarray, y: np.ndarray, w: np.ndarray, edges: np.ndarray):
    """Weighted p(y=1) per bin of a scalar representation.

    Returns (estimates, weighted bin masses); bins with zero mass get NaN.
    """
    r = np.asarray(r, dtype=float)
    idx = np.digitize(r, edges) - 1
    n_bins = edges.size - 1
    est = np.full(n_bins, np.nan)
    mass = np.zeros(n_bins)
    for b in range(n_bins):
        sel = idx == b
        total = w[sel].sum()
        mass[b] = total
        if total > 0:
            est[b] = float((w[sel] * y[sel]).sum() / total)
    return est, mass


def csv_row(report: PerfReport, seed: int, method: str, split: str) -> list[str]:
    """Fixed results.csv row: seed, method, split, accuracy, mean_loglik, kl_perf."""
    return [
        str(seed),
        method,
        split,
        "%.17g" % report.accuracy,
        "%.17g" % report.mean_loglik,
        "" if report.kl_perf is None else "%.17g" % report.kl_perf,
    ]
