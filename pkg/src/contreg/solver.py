"""Closed-form least squares under a continuum of shape displacements.

Instead of sampling displacement/feature pairs, the training objective
integrates the squared prediction error over a displacement distribution.
With features linearised around the ground truth, the minimiser depends on
the distribution only through its first two moments, so the solver consumes
per-image ground-truth features and feature Jacobians plus a moment
specification, and never sees individual draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

RIDGE_FRACTION = 1e-6


@dataclass(frozen=True)
class MomentSpec:
    """First two moments of the displacement distribution."""

    mean: np.ndarray        # (D,)
    covariance: np.ndarray  # (D, D), symmetric PSD

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("covariance must be square and match the mean length")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        eigmin = float(np.linalg.eigvalsh(cov).min()) if mean.size else 0.0
        if eigmin < -1e-10 * max(1.0, float(np.trace(cov))):
            raise ValueError("covariance must be positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def zero(cls, dim: int) -> "MomentSpec":
        return cls(mean=np.zeros(dim), covariance=np.zeros((dim, dim)))

    @classmethod
    def from_limits(cls, limits) -> "MomentSpec":
        """Zero-mean moments of independent uniforms on ``[-a_u, a_u]``."""
        limits = np.atleast_1d(np.asarray(limits, dtype=np.float64))
        if np.any(limits < 0):
            raise ValueError("limits must be non-negative")
        return cls(mean=np.zeros(limits.size), covariance=np.diag(limits**2 / 3.0))

    def diagonalised(self) -> "MomentSpec":
        """Zero-mean copy keeping only the covariance diagonal."""
        return MomentSpec(mean=np.zeros(self.dim),
                          covariance=np.diag(np.diag(self.covariance)))

    def augmented(self) -> "AugmentedMoments":
        second = self.covariance + np.outer(self.mean, self.mean)
        target = np.hstack([self.mean[:, None], second])
        block = np.zeros((self.dim + 1, self.dim + 1))
        block[0, 0] = 1.0
        block[0, 1:] = self.mean
        block[1:, 0] = self.mean
        block[1:, 1:] = second
        return AugmentedMoments(target_block=target, second_moment=block)


@dataclass(frozen=True)
class AugmentedMoments:
    """Moment blocks of the displacement vector augmented with a leading one.

    ``second_moment`` is E[(1, d)(1, d)^T]; ``target_block`` is E[d (1, d)^T].
    """

    target_block: np.ndarray   # (D, D+1)
    second_moment: np.ndarray  # (D+1, D+1)


@dataclass(frozen=True)
class GroundTruthSample:
    """Ground-truth feature vector and feature Jacobian for one image."""

    features: np.ndarray  # (d,)
    jacobian: np.ndarray  # (d, D)

    def __post_init__(self):
        feats = np.atleast_1d(np.asarray(self.features, dtype=np.float64))
        jac = np.asarray(self.jacobian, dtype=np.float64)
        if jac.ndim != 2 or jac.shape[0] != feats.size:
            raise ValueError("jacobian rows must match the feature length")
        if not (np.all(np.isfinite(feats)) and np.all(np.isfinite(jac))):
            raise ValueError("sample contains non-finite values")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "jacobian", jac)

    @property
    def block(self) -> np.ndarray:
        """Features and Jacobian side by side: (d, D+1)."""
        return np.hstack([self.features[:, None], self.jacobian])


def _check_samples(samples) -> tuple[int, int]:
    if not samples:
        raise ValueError("need at least one ground-truth sample")
    d, dim = samples[0].features.size, samples[0].jacobian.shape[1]
    for s in samples:
        if s.features.size != d or s.jacobian.shape[1] != dim:
            raise ValueError("samples have inconsistent dimensions")
    return d, dim


def default_ridge(gram: np.ndarray) -> float:
    """Trace-scaled ridge used when none is given."""
    d = gram.shape[0]
    return RIDGE_FRACTION * float(np.trace(gram)) / d


def solve_gram(gram: np.ndarray, rhs: np.ndarray, ridge: float | None) -> np.ndarray:
    """Solve X @ (gram + ridge I) = rhs for X with symmetric PSD gram.

    Falls back to the pseudo-inverse if factorisation fails; with an
    explicit zero ridge a singular system raises instead.
    """
    if ridge is None:
        ridge = default_ridge(gram)
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    reg = gram + ridge * np.eye(gram.shape[0])
    try:
        factor = cho_factor(reg, lower=True, check_finite=False)
        return cho_solve(factor, rhs.T, check_finite=False).T
    except np.linalg.LinAlgError:
        pass
    except ValueError:
        pass
    if ridge == 0.0:
        raise np.linalg.LinAlgError(
            "singular normal equations with ridge = 0; pass a positive ridge"
        )
    return rhs @ np.linalg.pinv(reg, hermitian=True)


def functional_covariance(samples, moments: MomentSpec) -> np.ndarray:
    """Second moment of linearised features, summed over images.

    Equals ``sum_j E[f_j f_j^T]`` with ``f_j = x_j + J_j d`` and ``d``
    distributed per ``moments``; returned symmetrised.
    """
    d, dim = _check_samples(samples)
    if moments.dim != dim:
        raise ValueError("moment dimension does not match the Jacobians")
    block = moments.augmented().second_moment
    acc = np.zeros((d, d))
    for s in samples:
        sb = s.block
        acc += sb @ block @ sb.T
    return 0.5 * (acc + acc.T)


def functional_cross_covariance(samples, moments: MomentSpec) -> np.ndarray:
    """Cross moment between displacements and linearised features.

    Equals ``sum_j E[d f_j^T]``, a (D, d) matrix.
    """
    _, dim = _check_samples(samples)
    if moments.dim != dim:
        raise ValueError("moment dimension does not match the Jacobians")
    target = moments.augmented().target_block
    block_sum = sum(s.block for s in samples)
    return target @ block_sum.T


def solve_correlated(samples, moments: MomentSpec, ridge: float | None = None) -> np.ndarray:
    """Expected-loss regressor for displacements with arbitrary moments.

    Parameters
    ----------
    samples : sequence of GroundTruthSample
    moments : MomentSpec
        Mean and covariance of the displacement distribution; the solution
        depends on the distribution only through these.
    ridge : float, optional
        Tikhonov term added to the feature second moment. Defaults to a
        trace-scaled value.

    Returns
    -------
    (D, d) matrix mapping feature vectors to predicted displacements.
    """
    cov = functional_covariance(samples, moments)
    cross = functional_cross_covariance(samples, moments)
    return solve_gram(cov, cross, ridge)


def solve_uncorrelated(samples, limits, ridge: float | None = None) -> np.ndarray:
    """Expected-loss regressor for independent zero-mean uniform displacements.

    ``limits`` gives the per-component half-widths ``a_u``; the displacement
    covariance is ``diag(a_u^2 / 3)``.
    """
    d, dim = _check_samples(samples)
    limits = np.atleast_1d(np.asarray(limits, dtype=np.float64))
    if limits.size == 1:
        limits = np.full(dim, limits[0])
    if limits.size != dim:
        raise ValueError("limits length does not match the Jacobians")
    cov = np.diag(limits**2 / 3.0)
    gram = np.zeros((d, d))
    jac_sum = np.zeros((d, dim))
    for s in samples:
        gram += np.outer(s.features, s.features) + s.jacobian @ cov @ s.jacobian.T
        jac_sum += s.jacobian
    gram = 0.5 * (gram + gram.T)
    return solve_gram(gram, cov @ jac_sum.T, ridge)


def expected_loss(samples, moments: MomentSpec, regressor: np.ndarray) -> float:
    """Training objective value: expected squared error summed over images."""
    _, dim = _check_samples(samples)
    if regressor.shape[1] != samples[0].features.size or regressor.shape[0] != dim:
        raise ValueError("regressor dimensions do not match the samples")
    mu, cov = moments.mean, moments.covariance
    total = 0.0
    eye = np.eye(dim)
    for s in samples:
        shrink = eye - regressor @ s.jacobian       # I - R J
        quad = shrink.T @ shrink
        rx = regressor @ s.features
        linear = s.jacobian.T @ (regressor.T @ rx) - rx  # J^T R^T R x - R x
        total += (
            float(np.trace(quad @ cov))
            + float(mu @ quad @ mu)
            + 2.0 * float(mu @ linear)
            + float(rx @ rx)
        )
    return total
