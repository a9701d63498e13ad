"""Closed-form oracles for the synthetic families.

All quantities are in nats (natural logarithm throughout); learned
components are tested against these functions.

Conditional analysis of the continuous family works in the *analysis
model*: the covariates written as label-plus-noise channels

    x1 = (1-a)*y + sqrt(sigma2)*e1,   x2 = (1+a)*y + e2,

with e1, e2 independent standard normals, yielding

    E[y | x]  = [(1-a), sigma2*(1+a)] x / D(a),
    Var(y|x)  = sigma2 / D(a),
    D(a)      = sigma2*(1+a)^2 + (1-a)^2 + sigma2.

The spread constant

    C(a, b) = sigma2*(1+b)^2 + (1-b)^2 - sigma2*(a+b+a*b) - (1-a)*(1-b)

measures how far the coupling-``b`` posterior mean is from the truth when
the data come from coupling ``a``; C(a, a) = sigma2 exactly.

Note the sampled family in :mod:`randistill.families` shares the nuisance
across both covariates, so its exact covariate cross-covariance is
0.5 - a^2 rather than the analysis model's 1 - a^2; marginal variances and
label covariances agree.  Monte-Carlo verification of the conditional
closed forms therefore draws from :func:`sample_analysis_family`, which
matches the analysis covariance exactly.  Representation-landscape
quantities condition on the nuisance explicitly and use the sampled
family's structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

# Nuisance-randomized member of the continuous family used for the linear
# representation landscape: coupling 0, sigma2 = 2, so y ~ N(0,1),
# z ~ N(0, 0.5), x1-noise variance 1.5, x2-noise variance 0.5.
_LANDSCAPE_VAR_Y = 1.0
_LANDSCAPE_VAR_Z = 0.5
_LANDSCAPE_VAR_E1 = 1.5
_LANDSCAPE_VAR_E2 = 0.5

# Combined exogenous-noise variance of the binary family's summed
# covariates: x1 + x2 = 2y + e1 + e2 with Var(e1) = 9, Var(e2) = 0.01.
SUM_REP_NOISE_VAR = 9.01


class AnalyticError(ValueError):
    """Parameters outside the domain of a closed form."""


@dataclass(frozen=True)
class GaussianPosterior:
    """Linear-Gaussian conditional of y given x: N(coef . x, var)."""

    coef: tuple[float, float]
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise AnalyticError(f"conditional variance must be positive, got {self.var}")

    def mean(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ np.asarray(self.coef)

    def log_density(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        r = np.asarray(y, dtype=float) - self.mean(x)
        return -0.5 * (LOG_2PI + math.log(self.var) + r * r / self.var)


@dataclass(frozen=True)
class LinearRep:
    """Scalar linear representation r(x) = u*x1 + v*x2."""

    u: float
    v: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.u * x[..., 0] + self.v * x[..., 1]


def logistic(t):
    t = np.clip(t, -30.0, 30.0)
    return 1.0 / (1.0 + np.exp(-t))


def normal_cdf(t: float) -> float:
    return 0.5 * (1.0 + math.erf(t / math.sqrt(2.0)))


def binary_posterior(a: float, z) -> np.ndarray | float:
    """p(y=1 | z) for the binary family: logistic(2*a*z).

    Bayes rule on the class conditionals N(a, 1) and N(-a, 1) with equal
    priors gives log-odds 2*a*z.
    """
    return logistic(2.0 * a * np.asarray(z, dtype=float))


def _check_sigma2(sigma2: float) -> None:
    if not sigma2 > 0.5:
        raise AnalyticError(f"sigma2 must exceed 0.5, got {sigma2}")


def _d(a: float, sigma2: float) -> float:
    return sigma2 * (1.0 + a) ** 2 + (1.0 - a) ** 2 + sigma2


def _c(a: float, b: float, sigma2: float) -> float:
    return (
        sigma2 * (1.0 + b) ** 2
        + (1.0 - b) ** 2
        - sigma2 * (a + b + a * b)
        - (1.0 - a) * (1.0 - b)
    )


def continuous_posterior(a: float, sigma2: float) -> GaussianPosterior:
    """Conditional of y given x in the analysis model at coupling a."""
    _check_sigma2(sigma2)
    d = _d(a, sigma2)
    return GaussianPosterior(((1.0 - a) / d, sigma2 * (1.0 + a) / d), sigma2 / d)


def analysis_covariance(a: float, sigma2: float) -> np.ndarray:
    """Covariance of (y, x1, x2) in the analysis model."""
    _check_sigma2(sigma2)
    return np.array(
        [
            [1.0, 1.0 - a, 1.0 + a],
            [1.0 - a, (1.0 - a) ** 2 + sigma2, 1.0 - a * a],
            [1.0 + a, 1.0 - a * a, (1.0 + a) ** 2 + 1.0],
        ]
    )


def sample_analysis_family(a: float, sigma2: float, n: int, seed: int):
    """Draw (y, x) from the analysis model; used by the Monte-Carlo
    cross-checks of the conditional closed forms."""
    from .rng import make_rng

    chol = np.linalg.cholesky(analysis_covariance(a, sigma2))
    draws = make_rng(seed, "eval").standard_normal((n, 3)) @ chol.T
    return draws[:, 0], draws[:, 1:]


def rel_perf(a: float, b: float, sigma2: float) -> float:
    """Performance of the label marginal minus that of the coupling-b
    posterior, both scored on coupling-a data.

    Equals (C(a,b)^2 - sigma2^2) / (2*sigma2*D(b)) - 0.5*log(D(b)/sigma2).
    Positive means predicting without covariates beats the conditional.
    At a = b the first term vanishes and the value is minus the mutual
    information between x and y.
    """
    _check_sigma2(sigma2)
    db = _d(b, sigma2)
    c = _c(a, b, sigma2)
    return (c * c - sigma2 * sigma2) / (2.0 * sigma2 * db) - 0.5 * math.log(db / sigma2)


def cross_kl(a: float, b: float, sigma2: float) -> float:
    """Expected KL from the coupling-a posterior to the coupling-b posterior
    under coupling-a covariates.

    rel_perf(a, b) + 0.5*log(D(a)/sigma2); zero at a = b.
    """
    return rel_perf(a, b, sigma2) + 0.5 * math.log(_d(a, sigma2) / sigma2)


def prop_posterior(a: float) -> GaussianPosterior:
    """Conditional of y given x for the separated-covariate family
    (x1 carries the label, x2 carries the nuisance):
    mean [1, a] x / (a^2 + 2), variance 1 / (a^2 + 2)."""
    d = a * a + 2.0
    return GaussianPosterior((1.0 / d, a / d), 1.0 / d)


def prop_cross_kl(a: float, b: float) -> float:
    """Expected KL from the coupling-a posterior to the coupling-b posterior
    under coupling-a covariates of the separated-covariate family.

    Because that family's covariates do not mix label and nuisance, the
    identity representation is uncorrelating and the minimax sweep of this
    quantity lands on the independence member b = 0.
    """
    pa, pb = prop_posterior(a), prop_posterior(b)
    cov = np.array([[2.0, a], [a, a * a + 1.0]])
    d = np.asarray(pa.coef) - np.asarray(pb.coef)
    mean_sq = float(d @ cov @ d)
    return 0.5 * (math.log(pb.var / pa.var) + (pa.var + mean_sq) / pb.var - 1.0)


def prop3_criterion(a: float, b: float) -> float:
    """Excess of the posterior mismatch over the information content for the
    separated-covariate family: ((b^2+1-a*b)^2 - 1) / (2*(b^2+2))
    - 0.5*log(b^2+2).

    A positive value witnesses a family member on which the coupling-b
    conditional loses to marginal prediction.
    """
    d = b * b + 2.0
    m = b * b + 1.0 - a * b
    return (m * m - 1.0) / (2.0 * d) - 0.5 * math.log(d)


def gap_posterior(rho) -> np.ndarray:
    """Posterior table f[b, ind] = p(y=1 | x=[b, ind]) of the discrete family.

    f(1, ind) = rho(1, ind) / (rho(0, ind) + rho(1, ind))
    f(0, ind) = (1 - rho(1, ind)) / (2 - rho(0, ind) - rho(1, ind))
    """
    tab = np.asarray(rho, dtype=float)
    if tab.shape != (2, 2) or not np.all((tab > 0.0) & (tab < 1.0)):
        raise AnalyticError("rho must be a 2x2 table with entries strictly inside (0, 1)")
    f = np.empty((2, 2))
    f[1, :] = tab[1, :] / (tab[0, :] + tab[1, :])
    f[0, :] = (1.0 - tab[1, :]) / (2.0 - tab[0, :] - tab[1, :])
    return f


def _rep_second_moments(rep: LinearRep) -> tuple[float, float, float]:
    """(Var r, Cov(y, r), Cov(z, r)) under the landscape family."""
    u, v = rep.u, rep.v
    cy = (u + v) * _LANDSCAPE_VAR_Y
    cz = (v - u) * _LANDSCAPE_VAR_Z
    vr = (
        (u + v) ** 2 * _LANDSCAPE_VAR_Y
        + (v - u) ** 2 * _LANDSCAPE_VAR_Z
        + u * u * _LANDSCAPE_VAR_E1
        + v * v * _LANDSCAPE_VAR_E2
    )
    return vr, cy, cz


def eq5_landscape(rep: LinearRep, lam: float) -> float:
    """Conditional-dependence-penalized likelihood of a linear representation.

    Under the nuisance-randomized continuous family, returns

        E log p(y | r) - lam * I(y; z | r)
        = -0.5*log(2*pi*e*Var(y|r)) - lam * 0.5*log(Var(y|r) / Var(y|r,z)).

    The representation (0, 0) is defined as the vanishing-representation
    limit: marginal prediction, -0.5*log(2*pi*e), with zero penalty.
    """
    if lam < 0:
        raise AnalyticError("penalty coefficient must be nonnegative")
    vr, cy, cz = _rep_second_moments(rep)
    if vr == 0.0:
        return -0.5 * (LOG_2PI + 1.0)
    v_y_r = _LANDSCAPE_VAR_Y - cy * cy / vr
    # Schur complement for conditioning on (r, z) jointly.
    det = vr * _LANDSCAPE_VAR_Z - cz * cz
    if det <= 0.0:
        raise AnalyticError(f"degenerate (r, z) covariance for rep {rep}")
    v_y_rz = _LANDSCAPE_VAR_Y - cy * cy * _LANDSCAPE_VAR_Z / det
    loglik = -0.5 * (LOG_2PI + 1.0 + math.log(v_y_r))
    penalty = 0.5 * (math.log(v_y_r) - math.log(v_y_rz))
    return loglik - lam * penalty


def analytic_mi_y_given_rep(rep: LinearRep) -> float:
    """I(y; r(x)) under the nuisance-randomized continuous family.

    0.5*log(Var(r) / Var(r | y)); zero-variance representations return 0
    by convention.
    """
    vr, cy, _ = _rep_second_moments(rep)
    if vr == 0.0:
        return 0.0
    v_r_y = vr - cy * cy / _LANDSCAPE_VAR_Y
    return 0.5 * math.log(vr / v_r_y)


def landscape_grid(lam: float, grid: np.ndarray) -> np.ndarray:
    """Evaluate :func:`eq5_landscape` on the cartesian grid x grid."""
    values = np.empty((grid.size, grid.size))
    for i, u in enumerate(grid):
        for j, v in enumerate(grid):
            values[i, j] = eq5_landscape(LinearRep(float(u), float(v)), lam)
    return values


def write_landscape_csv(path, lam: float, grid: np.ndarray) -> None:
    """Plot-ready (u, v, value) rows for the penalized landscape."""
    values = landscape_grid(lam, grid)
    with open(path, "w") as fh:
        fh.write("u,v,value\n")
        for i, u in enumerate(grid):
            for j, v in enumerate(grid):
                fh.write("%.17g,%.17g,%.17g\n" % (u, v, values[i, j]))


def optimal_linear_accuracy(a_test: float = 0.0) -> float:
    """Bayes accuracy of thresholding x1 + x2 at 1 for the binary family.

    x1 + x2 = 2y + noise with noise variance 9.01: the nuisance cancels,
    so the accuracy Phi(1 / sqrt(9.01)) does not depend on the test
    coupling.  ``a_test`` is accepted to make the invariance explicit.
    """
    return normal_cdf(1.0 / math.sqrt(SUM_REP_NOISE_VAR))


def sum_rep_posterior(r) -> np.ndarray | float:
    """p(y=1 | x1+x2 = r) for the binary family under nuisance randomization.

    The summed representation is 2y + noise, so the log-odds are
    (2r - 2) / 9.01 for any nuisance marginal.
    """
    return logistic((2.0 * np.asarray(r, dtype=float) - 2.0) / SUM_REP_NOISE_VAR)


def gaussian_mi(correlation: float) -> float:
    """Mutual information of a bivariate Gaussian pair: -0.5*log(1 - rho^2)."""
    if not -1.0 < correlation < 1.0:
        raise AnalyticError("correlation must lie strictly inside (-1, 1)")
    return -0.5 * math.log(1.0 - correlation * correlation)
