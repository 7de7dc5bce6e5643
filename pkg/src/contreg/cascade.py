"""Cascades of expected-loss regressors over shrinking displacement moments.

Training extracts ground-truth features and Jacobians exactly once per
image (five descriptor extractions each), then every level is solved in
closed form from those cached quantities; the cascade's own training
trajectory is propagated with first-order predicted features, so adding
levels or retraining with new moments costs no further extractions. A
classic sampling-based cascade trainer is included for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from contreg.features import (
    FeatureConfig,
    PcaModel,
    empirical_jacobian,
    extract_raw,
    functional_pca,
    param_jacobian,
)
from contreg.oracle import draw_perturbations, sampling_regression
from contreg.shapes import PdmModel, ShapeParams, as_shape, compose_shape
from contreg.solver import (
    GroundTruthSample,
    MomentSpec,
    default_ridge,
    functional_covariance,
    functional_cross_covariance,
    solve_gram,
)

PARAM_SPACE = "param"
POINT_SPACE = "point"


@dataclass(frozen=True)
class LevelStats:
    """Residual displacements left after applying one cascade level."""

    residuals: np.ndarray  # (N, D)
    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def from_residuals(cls, residuals: np.ndarray) -> "LevelStats":
        residuals = np.asarray(residuals, dtype=np.float64)
        mean = residuals.mean(axis=0)
        if residuals.shape[0] > 1:
            cov = np.cov(residuals, rowvar=False, ddof=1)
        else:
            cov = np.zeros((residuals.shape[1], residuals.shape[1]))
        cov = np.atleast_2d(cov)
        return cls(residuals=residuals, mean=mean, covariance=0.5 * (cov + cov.T))

    def moments(self) -> MomentSpec:
        return MomentSpec(mean=self.mean, covariance=self.covariance)


@dataclass(frozen=True)
class CascadeLevel:
    """One trained level: compression, regressor and its training moments."""

    regressor: np.ndarray       # (D, k)
    bias: np.ndarray            # (D,), zero for closed-form levels
    pca: PcaModel
    moments: MomentSpec
    ridge: float
    functional_cov: np.ndarray | None = None  # (k, k) ridge-regularised, as inverted
    block_sum: np.ndarray | None = None       # (k, D+1) summed feature/Jacobian blocks


@dataclass
class TrainingCache:
    """Everything needed to retrain every level without touching images."""

    samples: list            # GroundTruthSample per image, uncompressed features
    targets: np.ndarray      # (M, D) ground-truth target vectors
    pdm: PdmModel | None
    feature_config: FeatureConfig
    space: str
    n_points: int
    levels: int
    n_components: int
    ridge: float | None
    moment_mode: str
    draws_per_image: int
    seed: int
    cache_covariances: bool


@dataclass
class CascadeModel:
    """Trained cascade plus the shared shape model and descriptor settings."""

    pdm: PdmModel | None
    feature_config: FeatureConfig
    levels: list
    space: str = PARAM_SPACE
    n_points: int = 0
    level_stats: list = field(default_factory=list, repr=False)
    cache: TrainingCache | None = field(default=None, repr=False)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def target_dim(self) -> int:
        return self.levels[0].regressor.shape[0]


def _target_vector(space: str, target) -> np.ndarray:
    if space == PARAM_SPACE:
        return target.vector()
    return as_shape(target)


def _vector_to_shape(model_space: str, pdm: PdmModel | None, vec: np.ndarray) -> np.ndarray:
    if model_space == PARAM_SPACE:
        return compose_shape(pdm, ShapeParams.from_vector(vec, pdm.n_flex))
    return vec


def _clamp_param_vector(space: str, vec: np.ndarray) -> np.ndarray:
    if space == PARAM_SPACE and vec[0] <= 0.0:
        vec = vec.copy()
        vec[0] = 1e-9
    return vec


def build_training_cache(images, targets, cfg: FeatureConfig, pdm: PdmModel | None = None,
                         space: str = PARAM_SPACE, levels: int = 4, n_components: int = 48,
                         ridge: float | None = None, moment_mode: str = "full",
                         draws_per_image: int = 1, seed: int = 0,
                         cache_covariances: bool = True) -> TrainingCache:
    """Extract per-image ground-truth features and Jacobians once."""
    if space not in (PARAM_SPACE, POINT_SPACE):
        raise ValueError(f"unknown space {space!r}")
    if space == PARAM_SPACE and pdm is None:
        raise ValueError("parameter-space training needs a shape model")
    if cfg.pca is not None:
        raise ValueError("pass a descriptor config without PCA; levels build their own")
    if moment_mode not in ("full", "diag"):
        raise ValueError(f"unknown moment mode {moment_mode!r}")
    if len(images) != len(targets) or not images:
        raise ValueError("need matching, non-empty image and target lists")

    samples = []
    vectors = []
    n_points = pdm.n_points if pdm is not None else as_shape(targets[0]).size // 2
    for image, target in zip(images, targets):
        if space == PARAM_SPACE:
            shape = compose_shape(pdm, target)
            jac = param_jacobian(image, pdm, target, cfg)
        else:
            shape = as_shape(target)
            jac = empirical_jacobian(image, shape, cfg)
        feats = extract_raw(image, shape, cfg)
        samples.append(GroundTruthSample(features=feats, jacobian=jac))
        vectors.append(_target_vector(space, target))
    return TrainingCache(
        samples=samples, targets=np.asarray(vectors), pdm=pdm, feature_config=cfg,
        space=space, n_points=n_points, levels=levels, n_components=n_components,
        ridge=ridge, moment_mode=moment_mode, draws_per_image=draws_per_image,
        seed=seed, cache_covariances=cache_covariances,
    )


def _train_levels(cache: TrainingCache, init_moments: MomentSpec) -> CascadeModel:
    """Solve every cascade level from cached features; no image access."""
    targets = cache.targets
    n_images, dim = targets.shape
    if init_moments.dim != dim:
        raise ValueError("initial moments do not match the target dimension")

    perturb = draw_perturbations(init_moments, n_images, cache.draws_per_image,
                                 cache.seed, distribution="gaussian")
    deltas = perturb.deltas.reshape(-1, dim)            # (M*K, D)
    image_of = np.repeat(np.arange(n_images), cache.draws_per_image)

    moments = init_moments
    levels, stats = [], []
    for _ in range(cache.levels):
        if cache.moment_mode == "diag":
            moments = moments.diagonalised()
        pca = functional_pca(cache.samples, moments, cache.n_components)
        projected = [
            GroundTruthSample(features=pca.project(s.features),
                              jacobian=pca.project_jacobian(s.jacobian))
            for s in cache.samples
        ]
        cov = functional_covariance(projected, moments)
        ridge = cache.ridge if cache.ridge is not None else default_ridge(cov)
        cross = functional_cross_covariance(projected, moments)
        regressor = solve_gram(cov, cross, ridge)

        level = CascadeLevel(
            regressor=regressor, bias=np.zeros(dim), pca=pca, moments=moments,
            ridge=ridge,
            functional_cov=cov + ridge * np.eye(cov.shape[0]) if cache.cache_covariances else None,
            block_sum=sum(s.block for s in projected) if cache.cache_covariances else None,
        )
        levels.append(level)

        # advance the training trajectory with first-order predicted features
        for j in range(n_images):
            rows = image_of == j
            feats = projected[j].features[None, :] + deltas[rows] @ projected[j].jacobian.T
            deltas[rows] -= feats @ regressor.T
        stat = LevelStats.from_residuals(deltas.copy())
        stats.append(stat)
        moments = stat.moments()

    return CascadeModel(pdm=cache.pdm, feature_config=cache.feature_config,
                        levels=levels, space=cache.space, n_points=cache.n_points,
                        level_stats=stats, cache=cache)


def train_ccr(images, targets, init_moments: MomentSpec, cfg: FeatureConfig,
              pdm: PdmModel | None = None, space: str = PARAM_SPACE, levels: int = 4,
              n_components: int = 48, ridge: float | None = None,
              moment_mode: str = "full", draws_per_image: int = 1, seed: int = 0,
              cache_covariances: bool = True) -> CascadeModel:
    """Train a cascade in closed form.

    Parameters
    ----------
    images, targets : training images with ground-truth parameters
        (``ShapeParams`` in parameter space, shape vectors in point space).
    init_moments : displacement moments the first level is trained for.
    moment_mode : "full" keeps measured means/covariances per level;
        "diag" forces zero means and diagonal covariances throughout.

    Descriptor cost is five extractions per image regardless of the number
    of levels; the returned model carries a cache for free retraining.
    """
    cache = build_training_cache(
        images, targets, cfg, pdm=pdm, space=space, levels=levels,
        n_components=n_components, ridge=ridge, moment_mode=moment_mode,
        draws_per_image=draws_per_image, seed=seed, cache_covariances=cache_covariances,
    )
    return _train_levels(cache, init_moments)


def retrain_from_cache(cache: TrainingCache, init_moments: MomentSpec,
                       **overrides) -> CascadeModel:
    """Retrain every level from cached features with zero extractions.

    Accepts the same knobs as ``train_ccr`` (levels, n_components, ridge,
    moment_mode, draws_per_image, seed, cache_covariances) as overrides;
    with identical settings and moments the result is identical to the
    original training run.
    """
    if overrides:
        cache = replace(cache, **overrides)
    return _train_levels(cache, init_moments)


def apply_cascade(model: CascadeModel, image, init, regressors=None,
                  return_trajectory: bool = False):
    """Run the cascade on one image from an initial estimate.

    ``regressors`` optionally overrides the per-level regressor matrices
    (used after incremental updates). Returns the refined estimate, plus
    the per-level trajectory of estimates when requested.
    """
    if model.space == PARAM_SPACE:
        vec = init.vector() if isinstance(init, ShapeParams) else np.asarray(init, dtype=np.float64).copy()
    else:
        vec = as_shape(init).copy()
    trajectory = [vec.copy()]
    for idx, level in enumerate(model.levels):
        shape = _vector_to_shape(model.space, model.pdm, vec)
        feats = extract_raw(image, shape, model.feature_config)
        compressed = level.pca.project(feats)
        matrix = level.regressor if regressors is None else regressors[idx]
        vec = _clamp_param_vector(model.space, vec - (matrix @ compressed + level.bias))
        trajectory.append(vec.copy())
    if model.space == PARAM_SPACE:
        result = ShapeParams.from_vector(vec, model.pdm.n_flex)
    else:
        result = vec
    if return_trajectory:
        return result, trajectory
    return result


def _standard_pca(features: np.ndarray, n_components: int) -> PcaModel:
    """PCA of explicitly sampled feature rows."""
    mean = features.mean(axis=0)
    centred = features - mean
    cov = centred.T @ centred / features.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    comps = eigvecs[:, order]
    for k in range(comps.shape[1]):
        pivot = np.argmax(np.abs(comps[:, k]))
        if comps[pivot, k] < 0:
            comps[:, k] = -comps[:, k]
    return PcaModel(mean=mean, components=comps, eigenvalues=eigvals[order].copy())


def train_sdm(images, targets, init_moments: MomentSpec, cfg: FeatureConfig,
              pdm: PdmModel | None = None, space: str = PARAM_SPACE, levels: int = 4,
              n_draws: int = 10, n_components: int = 48, ridge: float = 1e-6,
              seed: int = 0) -> CascadeModel:
    """Train a sampling-based cascade (descriptors extracted per draw).

    Each level perturbs every training image ``n_draws`` times, extracts
    descriptors at the displaced shapes and solves an intercepted least
    squares; cost is levels * n_draws * images extractions.
    """
    if space == PARAM_SPACE and pdm is None:
        raise ValueError("parameter-space training needs a shape model")
    if cfg.pca is not None:
        raise ValueError("pass a descriptor config without PCA; levels build their own")
    gt_vectors = np.asarray([_target_vector(space, t) for t in targets])
    n_images, dim = gt_vectors.shape
    if init_moments.dim != dim:
        raise ValueError("initial moments do not match the target dimension")

    perturb = draw_perturbations(init_moments, n_images, n_draws, seed,
                                 distribution="gaussian")
    deltas = perturb.deltas.reshape(-1, dim)
    image_of = np.repeat(np.arange(n_images), n_draws)

    moments = init_moments
    model_levels, stats = [], []
    for _ in range(levels):
        raw = np.stack([
            extract_raw(images[j], _vector_to_shape(space, pdm, gt_vectors[j] + deltas[i]),
                        cfg)
            for i, j in enumerate(image_of)
        ])
        pca = _standard_pca(raw, n_components)
        compressed = (raw - pca.mean) @ pca.components
        solution = sampling_regression(compressed, deltas, ridge=ridge, intercept=True)
        regressor, bias = solution[:, :-1], solution[:, -1]

        model_levels.append(CascadeLevel(regressor=regressor, bias=bias, pca=pca,
                                         moments=moments, ridge=ridge))
        deltas = deltas - (compressed @ regressor.T + bias)
        stat = LevelStats.from_residuals(deltas.copy())
        stats.append(stat)
        moments = stat.moments()

    n_points = pdm.n_points if pdm is not None else as_shape(targets[0]).size // 2
    return CascadeModel(pdm=pdm, feature_config=cfg, levels=model_levels, space=space,
                        n_points=n_points, level_stats=stats, cache=None)


@dataclass(frozen=True)
class SamplingCostReport:
    """Descriptor-extraction budgets of the two training styles."""

    n_images: int
    levels: int
    draws_per_level: int

    @property
    def closed_form_extractions(self) -> int:
        # one ground-truth extraction plus four Jacobian shifts per image
        return 5 * self.n_images

    @property
    def sampling_extractions(self) -> int:
        return self.levels * self.draws_per_level * self.n_images

    @property
    def retrain_extractions(self) -> int:
        return 0

    @property
    def speedup(self) -> float:
        return self.sampling_extractions / self.closed_form_extractions


def sampling_cost_report(levels: int, draws_per_level: int, n_images: int) -> SamplingCostReport:
    """Predicted extraction counts for both trainers at the given sizes."""
    return SamplingCostReport(n_images=n_images, levels=levels,
                              draws_per_level=draws_per_level)
