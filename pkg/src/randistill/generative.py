"""Stage 1 by generation: fit the covariate conditional as a linear-Gaussian
model and resample with independently drawn labels and nuisances.

All in-scope families are linear-Gaussian in x given (y, z), so ordinary
least squares of x on [1, y, z] plus the residual covariance is the
maximum-likelihood conditional.  Randomized data then pairs y and z by
independent resampling from their empirical marginals (with replacement)
before drawing x from the fitted conditional.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .families import Dataset, FamilyError
from .rng import make_rng


class GenerativeError(ValueError):
    pass


@dataclass(frozen=True)
class LinearGaussianGen:
    """x | y, z ~ N(mean_coef @ [1, y, z], resid_cov)."""

    mean_coef: np.ndarray  # (2, 3)
    resid_cov: np.ndarray  # (2, 2), symmetric positive semi-definite

    def __post_init__(self):
        coef = np.asarray(self.mean_coef, dtype=float)
        cov = np.asarray(self.resid_cov, dtype=float)
        if coef.shape != (2, 3) or cov.shape != (2, 2):
            raise GenerativeError(
                f"expected coef (2,3) and cov (2,2), got {coef.shape} and {cov.shape}"
            )
        if not np.allclose(cov, cov.T):
            raise GenerativeError("residual covariance must be symmetric")
        object.__setattr__(self, "mean_coef", coef)
        object.__setattr__(self, "resid_cov", cov)

    def mean(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        design = np.column_stack([np.ones_like(y), y, z[:, 0]])
        return design @ self.mean_coef.T


def fit_generator(data: Dataset) -> LinearGaussianGen:
    """Least squares of x on [1, y, z]; residual covariance uses denominator n."""
    n = len(data)
    if n < 10:
        raise GenerativeError(f"need at least 10 samples to fit, got {n}")
    design = np.column_stack([np.ones(n), data.y, data.z[:, 0]])
    gram = design.T @ design
    if np.linalg.matrix_rank(gram) < 3:
        raise GenerativeError("singular design matrix: y and z carry no independent variation")
    coef = np.linalg.solve(gram, design.T @ data.x)  # (3, 2)
    resid = data.x - design @ coef
    return LinearGaussianGen(coef.T, resid.T @ resid / n)


def sample_randomized(
    gen: LinearGaussianGen, data: Dataset, n: int, seed: int
) -> Dataset:
    """Draw y and z independently from the empirical marginals of ``data``
    and x from the fitted conditional; output weights are all 1."""
    if n < 1:
        raise GenerativeError("n must be >= 1")
    rng = make_rng(seed, "randomize")
    m = len(data)
    y = data.y[rng.integers(0, m, size=n)]
    z = data.z[rng.integers(0, m, size=n)]
    mean = gen.mean(y, z)
    # Cholesky with a graceful fall-back for (near-)zero residual noise.
    cov = gen.resid_cov
    jitter = 0.0
    for _ in range(3):
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(2))
            break
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-12)
    else:
        raise GenerativeError("residual covariance is not positive semi-definite")
    x = mean + rng.standard_normal((n, 2)) @ chol.T
    return Dataset(y, z, x, np.ones(n), data.spec, seed)


def save_generator(gen: LinearGaussianGen, path) -> None:
    with open(path, "w") as fh:
        json.dump(
            {"mean_coef": gen.mean_coef.tolist(), "resid_cov": gen.resid_cov.tolist()},
            fh,
        )


def load_generator(path) -> LinearGaussianGen:
    with open(path) as fh:
        doc = json.load(fh)
    return LinearGaussianGen(np.asarray(doc["mean_coef"]), np.asarray(doc["resid_cov"]))
