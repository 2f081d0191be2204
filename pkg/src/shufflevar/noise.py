"""Parametric noise covariance families and synthetic experiment sampling.

Supported families:

- ``iid``          -- white noise, identity correlation.
- ``exp_nugget``   -- exponentially decaying stationary correlation with a
  discontinuous-at-zero (nugget) component.
- ``block``        -- additive session effect: constant covariance within a
  block plus white noise on the diagonal.
- ``ar``           -- stationary autoregressive correlation (order <= a few).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import toeplitz

from .design import DesignSchedule, MeasurementSeries, MissingBlocks
from .permutations import contrast_trace


class NonStationary(ValueError):
    """AR coefficients do not define a stationary process."""


class FactorizationFailure(RuntimeError):
    """Covariance is not positive semi-definite even after diagonal jitter."""


def cov_exp_nugget(T: int, lam1: float, lam2: float) -> np.ndarray:
    """Stationary correlation with exponential decay and a nugget.

    Off-diagonal entries are ``lam1 * exp(-|t-u| / lam2)``; the diagonal is
    exactly 1.  ``lam1`` is the correlated share of the noise variance,
    ``lam2`` the decay length in time slots.
    """
    if not 0.0 <= lam1 <= 1.0:
        raise ValueError(f"lam1 must be in [0, 1], got {lam1}")
    if lam2 <= 0:
        raise ValueError(f"lam2 must be positive, got {lam2}")
    row = lam1 * np.exp(-np.arange(T) / lam2)
    row[0] = 1.0
    return toeplitz(row)


def cov_block(
    design: DesignSchedule, sigma2_block: float, sigma2_unit: float
) -> np.ndarray:
    """Covariance of an additive session effect plus white noise.

    Entry (t, u) is ``sigma2_block`` when t and u share a block, plus
    ``sigma2_unit`` on the diagonal.  Note this is a covariance, not a
    unit-diagonal correlation.
    """
    if sigma2_block < 0 or sigma2_unit < 0:
        raise ValueError("variance components must be nonnegative")
    if sigma2_block == 0 and sigma2_unit == 0:
        raise ValueError("at least one variance component must be positive")
    if not design.has_blocks:
        raise MissingBlocks("block covariance requires explicit block labels")
    same = np.equal.outer(design.block_index, design.block_index)
    return sigma2_block * same.astype(float) + sigma2_unit * np.eye(design.T)


def ar_autocorrelations(coefficients: Sequence[float], n_lags: int) -> np.ndarray:
    """Autocorrelations rho_0..rho_{n_lags-1} of a stationary AR process."""
    a = np.asarray(coefficients, dtype=float)
    p = len(a)
    rho = np.zeros(max(n_lags, p + 1))
    rho[0] = 1.0
    if p == 0:
        return rho[:n_lags]

    companion = np.zeros((p, p))
    companion[0] = a
    if p > 1:
        companion[1:, :-1] = np.eye(p - 1)
    if np.abs(np.linalg.eigvals(companion)).max() >= 1.0:
        raise NonStationary(f"AR coefficients {a.tolist()} are not stationary")

    # Linear system for rho_1..rho_p: rho_k = sum_j a_j rho_{|k-j|}, rho_0 = 1.
    M = np.eye(p)
    b = np.zeros(p)
    for k in range(1, p + 1):
        for j in range(1, p + 1):
            lag = abs(k - j)
            if lag == 0:
                b[k - 1] += a[j - 1]
            else:
                M[k - 1, lag - 1] -= a[j - 1]
    rho[1 : p + 1] = np.linalg.solve(M, b)
    for k in range(p + 1, len(rho)):
        rho[k] = np.dot(a, rho[k - p : k][::-1])
    return rho[:n_lags]


def cov_ar(T: int, coefficients: Sequence[float]) -> np.ndarray:
    """Stationary AR correlation matrix (unit diagonal) of size T."""
    return toeplitz(ar_autocorrelations(coefficients, T))


@dataclass(frozen=True)
class CovarianceModel:
    """A noise covariance family plus its parameters.

    Use the class methods to construct instances; :meth:`materialize`
    produces the dense matrix for a given design.
    """

    family: str
    params: tuple = ()

    @classmethod
    def iid(cls) -> "CovarianceModel":
        return cls("iid")

    @classmethod
    def exp_nugget(cls, lam1: float, lam2: float) -> "CovarianceModel":
        return cls("exp_nugget", (float(lam1), float(lam2)))

    @classmethod
    def block(cls, sigma2_block: float, sigma2_unit: float) -> "CovarianceModel":
        return cls("block", (float(sigma2_block), float(sigma2_unit)))

    @classmethod
    def ar(cls, coefficients: Sequence[float]) -> "CovarianceModel":
        return cls("ar", tuple(float(c) for c in coefficients))

    def materialize(self, design: DesignSchedule) -> np.ndarray:
        if self.family == "iid":
            return np.eye(design.T)
        if self.family == "exp_nugget":
            return cov_exp_nugget(design.T, *self.params)
        if self.family == "block":
            return cov_block(design, *self.params)
        if self.family == "ar":
            return cov_ar(design.T, self.params)
        raise ValueError(f"unknown covariance family {self.family!r}")


@dataclass(frozen=True)
class ExperimentTruth:
    """Analytic variance decomposition of a synthetic experiment."""

    sigma2_A: float
    noise_level: float
    total: float
    omega2: float
    degenerate: bool = False


def noise_level(Sigma: np.ndarray, design: DesignSchedule, sigma2_eps: float = 1.0) -> float:
    """Exact expected noise contribution to the between-treatment contrast.

    ``tr((B - G) Sigma) * sigma2_eps / ((m - 1) n)``; reduces to
    ``sigma2_eps / n`` for white noise.
    """
    return (
        sigma2_eps
        * contrast_trace(Sigma, design)
        / ((design.m - 1) * design.n)
    )


def psd_cholesky(Sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying with growing diagonal jitter.

    Jitter starts at 1e-10 and escalates tenfold up to 1e-6 before raising
    :class:`FactorizationFailure`.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    try:
        return np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10
    eye = np.eye(Sigma.shape[0])
    while jitter <= 1e-6:
        try:
            return np.linalg.cholesky(Sigma + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationFailure("covariance is not positive semi-definite")


def make_truth(sigma2_A: float, noise: float) -> ExperimentTruth:
    total = sigma2_A + noise
    if total > 0:
        return ExperimentTruth(sigma2_A, noise, total, sigma2_A / total)
    return ExperimentTruth(sigma2_A, noise, total, 0.0, degenerate=True)


def substream(seed, *key) -> np.random.Generator:
    """Deterministic RNG substream for (seed, key...).

    Replicate workers draw from disjoint substreams, so parallel and serial
    runs produce identical results.
    """
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


def sample_experiment(
    design: DesignSchedule,
    sigma2_A: float,
    noise: CovarianceModel,
    sigma2_eps: float,
    seed,
    series_id: str = "sim",
    chol: Optional[np.ndarray] = None,
) -> Tuple[MeasurementSeries, ExperimentTruth]:
    """Draw one synthetic experiment Y = signal + correlated noise.

    Treatment effects are i.i.d. centered Gaussians with variance
    ``sigma2_A``; the noise is Gaussian with covariance ``sigma2_eps *
    Sigma``.  The analytic truth is attached.  Pass a precomputed ``chol``
    factor of the covariance to amortize the factorization across draws.
    """
    if sigma2_A < 0 or sigma2_eps < 0:
        raise ValueError("variances must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    Sigma = noise.materialize(design)
    if chol is None:
        chol = psd_cholesky(Sigma)
    effects = rng.normal(0.0, np.sqrt(sigma2_A), design.m)
    eps = np.sqrt(sigma2_eps) * (chol @ rng.standard_normal(design.T))
    values = effects[design.stimulus_index] + eps
    truth = make_truth(sigma2_A, noise_level(Sigma, design, sigma2_eps))
    return MeasurementSeries(values, series_id=series_id), truth
