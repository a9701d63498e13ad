"""Seeded samplers for the four synthetic nuisance-varying families.

Each family factorizes as ``p(y) * p_a(z | y) * p(x | y, z)``: the label
marginal and the covariate conditional are shared, only the nuisance-label
coupling ``a`` (or the table ``rho``) moves between members.

Generators
----------
BinaryGaussian(a):
    y ~ Bernoulli(0.5); z ~ N(a*(2y-1), 1);
    x1 ~ N(y-z, 9); x2 ~ N(y+z, 0.01).
ContinuousGaussian(a, sigma2):
    y ~ N(0,1); z ~ N(a*y, 0.5);
    x1 ~ N(y-z, sigma2-0.5); x2 ~ N(y+z, 0.5).
PropGaussian(a):
    y ~ N(0,1); z ~ N(a*y, 0.5); x = [y + e_y, z + sqrt(0.5)*e_z].
GapDiscrete(rho):
    y ~ Bernoulli(0.5); z ~ N(0,1); b ~ Bernoulli(rho[y, 1[z>=0]]);
    x = [b, 1[z>=0]] stored as reals so one Dataset type serves all
    families.

Datasets are columnar: ``y`` (n,), ``z`` (n,1) (nuisances are vectors
everywhere downstream), ``x`` (n,2), ``w`` (n,) importance weights
defaulting to 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .rng import make_rng

KINDS = ("ContinuousGaussian", "BinaryGaussian", "PropGaussian", "GapDiscrete")

CSV_HEADER = ["y", "z", "x1", "x2", "w"]
# 17 significant digits round-trip float64 exactly.
_FMT = "%.17g"


class FamilyError(ValueError):
    """Invalid family parameters or malformed dataset."""


@dataclass(frozen=True)
class FamilySpec:
    """Descriptor of one family plus its parameters.

    ``a`` is the nuisance-label coupling (unused for GapDiscrete),
    ``sigma2`` the first-covariate scale of ContinuousGaussian, ``rho``
    the 2x2 table rho[y, sign-of-z] of GapDiscrete.
    """

    kind: str
    a: float = 0.0
    sigma2: float = 2.0
    rho: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FamilyError(f"unknown family kind {self.kind!r}")
        if self.kind == "ContinuousGaussian" and not self.sigma2 > 0.5:
            raise FamilyError(
                f"sigma2 must exceed 0.5 (first covariate variance is sigma2 - 0.5), got {self.sigma2}"
            )
        if self.kind == "GapDiscrete":
            if self.rho is None:
                raise FamilyError("GapDiscrete requires a rho table")
            tab = np.asarray(self.rho, dtype=float)
            if tab.shape != (2, 2):
                raise FamilyError(f"rho must be 2x2, got shape {tab.shape}")
            if not np.all((tab > 0.0) & (tab < 1.0)):
                raise FamilyError("rho entries must lie strictly inside (0, 1)")


class Sample(NamedTuple):
    y: float
    z: np.ndarray
    x: np.ndarray
    w: float


@dataclass
class Dataset:
    """Columnar sample arrays plus provenance (spec, seed)."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    w: np.ndarray
    spec: FamilySpec
    seed: int = 0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        n = self.y.shape[0]
        if n == 0:
            raise FamilyError("dataset must be non-empty")
        if self.z.shape != (n, 1) or self.x.shape != (n, 2) or self.w.shape != (n,):
            raise FamilyError(
                f"inconsistent shapes: y {self.y.shape}, z {self.z.shape}, "
                f"x {self.x.shape}, w {self.w.shape}"
            )
        if not np.all(self.w > 0):
            raise FamilyError("sample weights must be strictly positive")

    def __len__(self) -> int:
        return self.y.shape[0]

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self.sample(i)

    def sample(self, i: int) -> Sample:
        return Sample(float(self.y[i]), self.z[i].copy(), self.x[i].copy(), float(self.w[i]))

    def with_weights(self, w: np.ndarray) -> "Dataset":
        """Same samples, new importance weights."""
        return Dataset(self.y, self.z, self.x, np.asarray(w, dtype=float).copy(), self.spec, self.seed)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.y[idx], self.z[idx], self.x[idx], self.w[idx], self.spec, self.seed)


def sample_binary_gaussian(a: float, n: int, seed: int) -> Dataset:
    """Class-conditional Gaussian family with binary labels."""
    if n < 1:
        raise FamilyError("n must be >= 1")
    rng = make_rng(seed, "family")
    y = (rng.random(n) < 0.5).astype(float)
    z = rng.normal(a * (2.0 * y - 1.0), 1.0)
    x1 = rng.normal(y - z, 3.0)
    x2 = rng.normal(y + z, 0.1)
    spec = FamilySpec("BinaryGaussian", a=a)
    return Dataset(y, z[:, None], np.column_stack([x1, x2]), np.ones(n), spec, seed)


def sample_continuous_gaussian(a: float, sigma2: float, n: int, seed: int) -> Dataset:
    """Continuous-label family; x1 noise variance is sigma2 - 0.5."""
    if n < 1:
        raise FamilyError("n must be >= 1")
    spec = FamilySpec("ContinuousGaussian", a=a, sigma2=sigma2)  # validates sigma2
    rng = make_rng(seed, "family")
    y = rng.normal(0.0, 1.0, size=n)
    z = rng.normal(a * y, math.sqrt(0.5))
    x1 = rng.normal(y - z, math.sqrt(sigma2 - 0.5))
    x2 = rng.normal(y + z, math.sqrt(0.5))
    return Dataset(y, z[:, None], np.column_stack([x1, x2]), np.ones(n), spec, seed)


def sample_prop_family(a: float, n: int, seed: int) -> Dataset:
    """Family whose covariates carry the label and the nuisance separately."""
    if n < 1:
        raise FamilyError("n must be >= 1")
    rng = make_rng(seed, "family")
    y = rng.normal(0.0, 1.0, size=n)
    z = rng.normal(a * y, math.sqrt(0.5))
    x1 = y + rng.normal(0.0, 1.0, size=n)
    x2 = z + math.sqrt(0.5) * rng.normal(0.0, 1.0, size=n)
    spec = FamilySpec("PropGaussian", a=a)
    return Dataset(y, z[:, None], np.column_stack([x1, x2]), np.ones(n), spec, seed)


def sample_gap_family(rho: Sequence[Sequence[float]], n: int, seed: int) -> Dataset:
    """Discrete family: x = [b, 1[z>=0]] with b ~ Bernoulli(rho[y, 1[z>=0]])."""
    if n < 1:
        raise FamilyError("n must be >= 1")
    tab = np.asarray(rho, dtype=float)
    spec = FamilySpec("GapDiscrete", rho=tuple(map(tuple, tab)))  # validates rho
    rng = make_rng(seed, "family")
    y = (rng.random(n) < 0.5).astype(float)
    z = rng.normal(0.0, 1.0, size=n)
    ind = (z >= 0.0).astype(float)
    p_b = tab[y.astype(int), ind.astype(int)]
    b = (rng.random(n) < p_b).astype(float)
    return Dataset(y, z[:, None], np.column_stack([b, ind]), np.ones(n), spec, seed)


def sample_family(spec: FamilySpec, n: int, seed: int) -> Dataset:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "BinaryGaussian":
        return sample_binary_gaussian(spec.a, n, seed)
    if spec.kind == "ContinuousGaussian":
        return sample_continuous_gaussian(spec.a, spec.sigma2, n, seed)
    if spec.kind == "PropGaussian":
        return sample_prop_family(spec.a, n, seed)
    return sample_gap_family(spec.rho, n, seed)


def _log_normal(v: np.ndarray, mean: np.ndarray, var: float) -> np.ndarray:
    return -0.5 * (np.log(2.0 * math.pi * var) + (v - mean) ** 2 / var)


def log_density(data: Dataset, spec: FamilySpec) -> np.ndarray:
    """Per-sample log joint density of (y, z, x) under ``spec``.

    Defined for the three Gaussian families.  Members of the same family
    share support, so samples from one parameter value have finite log
    density under any other.
    """
    y, z = data.y, data.z[:, 0]
    x1, x2 = data.x[:, 0], data.x[:, 1]
    if spec.kind == "BinaryGaussian":
        return (
            math.log(0.5)
            + _log_normal(z, spec.a * (2.0 * y - 1.0), 1.0)
            + _log_normal(x1, y - z, 9.0)
            + _log_normal(x2, y + z, 0.01)
        )
    if spec.kind == "ContinuousGaussian":
        return (
            _log_normal(y, 0.0, 1.0)
            + _log_normal(z, spec.a * y, 0.5)
            + _log_normal(x1, y - z, spec.sigma2 - 0.5)
            + _log_normal(x2, y + z, 0.5)
        )
    if spec.kind == "PropGaussian":
        return (
            _log_normal(y, 0.0, 1.0)
            + _log_normal(z, spec.a * y, 0.5)
            + _log_normal(x1, y, 1.0)
            + _log_normal(x2, z, 0.5)
        )
    raise FamilyError(f"log_density is not defined for {spec.kind}")


def to_csv(data: Dataset, path) -> None:
    """Write ``y,z,x1,x2,w`` rows at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(len(data)):
            writer.writerow(
                _FMT % v
                for v in (data.y[i], data.z[i, 0], data.x[i, 0], data.x[i, 1], data.w[i])
            )


def from_csv(path, spec: FamilySpec, seed: int = 0) -> Dataset:
    """Inverse of :func:`to_csv`; round-trips float64 exactly."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise FamilyError(f"unexpected CSV header {header!r}")
        rows = np.array([[float(v) for v in row] for row in reader], dtype=float)
    if rows.size == 0:
        raise FamilyError("empty dataset CSV")
    return Dataset(rows[:, 0], rows[:, 1:2], rows[:, 2:4], rows[:, 4], spec, seed)
