"""Sampling-based regression used as a reference for the closed-form solver.

Draws explicit displacement/feature pairs and solves ordinary least
squares on them. With linearised ("taylor") features and enough draws the
result converges to the closed-form expected-loss solution, which is how
the solver is validated. Also provides the classic recursive update of a
sampling-based regressor for cost comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from contreg.features import FeatureConfig, extract
from contreg.solver import GroundTruthSample, MomentSpec, solve_gram


def _covariance_root(cov: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (handles rank deficiency)."""
    eigvals, eigvecs = np.linalg.eigh(cov)
    return eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


@dataclass(frozen=True)
class PerturbationSet:
    """Seeded displacement draws, one group of ``n_draws`` per image."""

    deltas: np.ndarray  # (n_images, n_draws, D)
    moments: MomentSpec
    distribution: str
    seed: int

    @property
    def n_images(self) -> int:
        return self.deltas.shape[0]

    @property
    def n_draws(self) -> int:
        return self.deltas.shape[1]

    def flat(self) -> np.ndarray:
        return self.deltas.reshape(-1, self.deltas.shape[2])


def draw_perturbations(moments: MomentSpec, n_images: int, n_draws: int, seed: int,
                       distribution: str = "gaussian") -> PerturbationSet:
    """Draw i.i.d. displacements with the requested first two moments.

    ``distribution`` is "gaussian" or "uniform"; the uniform variant draws
    independent uniforms with unit variance and colours them, so both
    share mean and covariance exactly.
    """
    if n_images < 1 or n_draws < 0:
        raise ValueError("need at least one image and a non-negative draw count")
    if distribution not in ("gaussian", "uniform"):
        raise ValueError(f"unknown distribution {distribution!r}")
    rng = np.random.default_rng(seed)
    root = _covariance_root(moments.covariance)
    size = (n_images, n_draws, moments.dim)
    if distribution == "gaussian":
        unit = rng.standard_normal(size)
    else:
        unit = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)
    deltas = moments.mean + unit @ root.T
    return PerturbationSet(deltas=deltas, moments=moments,
                           distribution=distribution, seed=seed)


def sampling_regression(features: np.ndarray, targets: np.ndarray,
                        ridge: float = 0.0, intercept: bool = True) -> np.ndarray:
    """Least-squares regressor from stacked draws.

    Parameters
    ----------
    features : (N, d) matrix, one row per draw.
    targets : (N, D) displacement targets.
    intercept : append a constant-one column; the returned matrix then has
        d+1 columns with the offset last.
    """
    feats = np.asarray(features, dtype=np.float64)
    if intercept:
        feats = np.hstack([feats, np.ones((feats.shape[0], 1))])
    gram = feats.T @ feats
    cross = targets.T @ feats
    return solve_gram(gram, cross, ridge)


def taylor_sampling_regression(samples, perturbations: PerturbationSet,
                               ridge: float = 0.0, intercept: bool = False) -> np.ndarray:
    """Sampling regression on first-order predicted features.

    The features for each draw are synthesised from the per-image
    ground-truth features and Jacobians, which makes this directly
    comparable to the closed-form solver on the same samples. Without an
    intercept the estimate converges to the closed-form solution as the
    number of draws grows.
    """
    if len(samples) != perturbations.n_images:
        raise ValueError("perturbation set does not match the sample count")
    feats, targets = [], []
    for sample, group in zip(samples, perturbations.deltas):
        feats.append(sample.features[None, :] + group @ sample.jacobian.T)
        targets.append(group)
    return sampling_regression(np.vstack(feats), np.vstack(targets),
                               ridge=ridge, intercept=intercept)


def train_sampling_regressor(images, gt_shapes, perturbations: PerturbationSet,
                             cfg: FeatureConfig, feature_mode: str = "extracted",
                             ridge: float = 0.0, intercept: bool | None = None) -> np.ndarray:
    """Train a displacement regressor from explicit perturbed extractions.

    ``feature_mode`` selects real descriptor extraction at every displaced
    shape ("extracted", one extraction per draw) or first-order synthesis
    from a single ground-truth extraction per image ("taylor").
    The intercept defaults to on for extracted features and off for
    linearised ones.
    """
    from contreg.features import empirical_jacobian, extract_raw

    if feature_mode not in ("extracted", "taylor"):
        raise ValueError(f"unknown feature mode {feature_mode!r}")
    if len(images) != perturbations.n_images or len(gt_shapes) != perturbations.n_images:
        raise ValueError("images, shapes and perturbations must align")
    if intercept is None:
        intercept = feature_mode == "extracted"

    feats, targets = [], []
    if feature_mode == "extracted":
        for image, shape, group in zip(images, gt_shapes, perturbations.deltas):
            shape = np.asarray(shape, dtype=np.float64)
            for delta in group:
                feats.append(extract(image, shape + delta, cfg))
                targets.append(delta)
        return sampling_regression(np.asarray(feats), np.asarray(targets),
                                   ridge=ridge, intercept=intercept)

    samples = []
    for image, shape in zip(images, gt_shapes):
        base = extract_raw(image, shape, cfg)
        jac = empirical_jacobian(image, shape, cfg)
        if cfg.pca is not None:
            base = cfg.pca.project(base)
        samples.append(GroundTruthSample(features=base, jacobian=jac))
    return taylor_sampling_regression(samples, perturbations,
                                      ridge=ridge, intercept=intercept)


class MultiplyCounter:
    """Accumulates scalar multiply counts of labelled matrix products."""

    def __init__(self):
        self.terms: dict[str, int] = {}

    def matmul(self, label: str, lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        cost = lhs.shape[0] * lhs.shape[1] * (rhs.shape[1] if rhs.ndim == 2 else 1)
        self.terms[label] = self.terms.get(label, 0) + cost
        return lhs @ rhs

    def inverse(self, label: str, mat: np.ndarray) -> np.ndarray:
        self.terms[label] = self.terms.get(label, 0) + mat.shape[0] ** 3
        return np.linalg.inv(mat)

    @property
    def total(self) -> int:
        return sum(self.terms.values())

    def dominant(self) -> tuple[str, int]:
        label = max(self.terms, key=self.terms.get)
        return label, self.terms[label]


def isdm_update(regressor: np.ndarray, inv_gram: np.ndarray,
                new_features: np.ndarray, new_targets: np.ndarray,
                counter: MultiplyCounter | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Recursive least-squares update of a sampling-based regressor.

    ``inv_gram`` is the maintained inverse feature Gram matrix; the update
    folds in a batch of feature columns/targets without retraining. The
    dense products keep this cubic in the feature dimension.

    Parameters
    ----------
    regressor : (D, d) current regressor.
    inv_gram : (d, d) inverse of the accumulated feature Gram.
    new_features : (d, K) feature columns of the new batch.
    new_targets : (D, K) displacement targets of the new batch.

    Returns
    -------
    (regressor, inv_gram) after the update.
    """
    feats = np.asarray(new_features, dtype=np.float64)
    targets = np.asarray(new_targets, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != inv_gram.shape[0]:
        raise ValueError("feature columns do not match the Gram dimension")
    if feats.shape[1] == 0:
        return regressor.copy(), inv_gram.copy()
    mm = counter.matmul if counter is not None else (lambda label, a, b: a @ b)
    inv = counter.inverse if counter is not None else (lambda label, a: np.linalg.inv(a))

    k = feats.shape[1]
    vx = mm("inv_gram @ new_features", inv_gram, feats)
    inner = np.eye(k) + mm("new_features.T @ vx", feats.T, vx)
    inner_inv = inv("inner inverse", inner)
    scaled = mm("new_features @ inner_inv", feats, inner_inv)
    gain = mm("scaled @ vx.T", scaled, vx.T)          # d x d
    new_inv_gram = inv_gram - mm("inv_gram @ gain", inv_gram, gain)
    new_inv_gram = 0.5 * (new_inv_gram + new_inv_gram.T)
    cross_step = mm("new_targets @ (new_features.T @ new_inv_gram)",
                    targets, mm("new_features.T @ new_inv_gram", feats.T, new_inv_gram))
    new_regressor = regressor - mm("regressor @ gain", regressor, gain) + cross_step
    return new_regressor, new_inv_gram
