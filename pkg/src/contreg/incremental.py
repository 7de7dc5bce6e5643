"""Low-rank online updates of a trained cascade.

Each level keeps the inverse of its accumulated feature second moment;
folding in one weighted sample only needs the inverse of a small matrix
whose size follows the target dimension, not the feature dimension, so an
update is quadratic in the feature dimension where retraining a
sampling-based regressor stays cubic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from contreg.cascade import CascadeModel
from contreg.features import PcaModel
from contreg.oracle import MultiplyCounter
from contreg.solver import GroundTruthSample, MomentSpec

DEFAULT_FORGETTING = (0.01, 0.025, 0.05, 0.1)


@dataclass(frozen=True)
class LevelState:
    """Mutable-by-replacement per-level accumulators plus frozen projections."""

    regressor: np.ndarray     # (D, k)
    inv_cov: np.ndarray       # (k, k)
    cov: np.ndarray           # (k, k) accumulated, ridge included
    cross_sum: np.ndarray     # (k, D+1)
    pca: PcaModel
    target_block: np.ndarray  # (D, D+1)
    moments: MomentSpec
    update_count: int = 0


@dataclass(frozen=True)
class IncrementalState:
    """Snapshot of all level accumulators; updates return new snapshots."""

    levels: tuple
    forgetting: tuple
    refresh_every: int = 100
    updates_applied: int = 0
    updates_skipped: int = 0

    @property
    def regressors(self) -> list:
        return [lvl.regressor for lvl in self.levels]


def init_incremental(model: CascadeModel, forgetting=DEFAULT_FORGETTING,
                     refresh_every: int = 100) -> IncrementalState:
    """Build update-ready state from a model trained with covariance caching."""
    if np.isscalar(forgetting):
        forgetting = (float(forgetting),) * model.n_levels
    forgetting = tuple(float(v) for v in forgetting)
    if len(forgetting) != model.n_levels:
        raise ValueError("need one forgetting factor per level")
    if any(v <= 0 for v in forgetting):
        raise ValueError("forgetting factors must be positive")

    levels = []
    for level in model.levels:
        if level.functional_cov is None or level.block_sum is None:
            raise ValueError("model was trained without covariance caching")
        inv_cov = np.linalg.inv(level.functional_cov)
        inv_cov = 0.5 * (inv_cov + inv_cov.T)
        target_block = level.moments.augmented().target_block
        regressor = target_block @ level.block_sum.T @ inv_cov
        levels.append(LevelState(
            regressor=regressor, inv_cov=inv_cov, cov=level.functional_cov.copy(),
            cross_sum=level.block_sum.copy(), pca=level.pca,
            target_block=target_block, moments=level.moments,
        ))
    return IncrementalState(levels=tuple(levels), forgetting=forgetting,
                            refresh_every=refresh_every)


def _second_moment_root(moments: MomentSpec) -> np.ndarray:
    """Symmetric square root of the augmented second-moment block."""
    block = moments.augmented().second_moment
    eigvals, eigvecs = np.linalg.eigh(block)
    return eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def _update_level(level: LevelState, sample_block: np.ndarray, lam: float,
                  moments: MomentSpec, refresh_every: int,
                  counter: MultiplyCounter | None) -> LevelState | None:
    """One weighted Woodbury step; None signals a skipped (ill-posed) update."""
    mm = counter.matmul if counter is not None else (lambda label, a, b: a @ b)
    weight = 1.0 / lam
    root = _second_moment_root(moments)
    low_rank = mm("block @ root", sample_block, root)       # (k, D+1)

    projected = mm("inv_cov @ low_rank", level.inv_cov, low_rank)
    inner = lam * np.eye(low_rank.shape[1]) + mm("low_rank.T @ projected",
                                                 low_rank.T, projected)
    try:
        factor = cho_factor(0.5 * (inner + inner.T), lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    solved = cho_solve(factor, projected.T, check_finite=False).T  # inv_cov U inner^-1
    if counter is not None:
        counter.terms["inner solve"] = counter.terms.get("inner solve", 0) \
            + low_rank.shape[1] ** 3 + low_rank.shape[1] ** 2 * projected.shape[0]
    inv_cov = level.inv_cov - mm("solved @ projected.T", solved, projected.T)
    inv_cov = 0.5 * (inv_cov + inv_cov.T)
    cov = level.cov + weight * mm("low_rank @ low_rank.T", low_rank, low_rank.T)
    cross_sum = level.cross_sum + weight * sample_block

    count = level.update_count + 1
    if refresh_every > 0 and count % refresh_every == 0:
        inv_cov = np.linalg.inv(cov)
        inv_cov = 0.5 * (inv_cov + inv_cov.T)
    regressor = mm("target_block @ (cross_sum.T @ inv_cov)", level.target_block,
                   mm("cross_sum.T @ inv_cov", cross_sum.T, inv_cov))
    return replace(level, regressor=regressor, inv_cov=inv_cov, cov=cov,
                   cross_sum=cross_sum, update_count=count)


def update(state: IncrementalState, sample: GroundTruthSample,
           level_moments=None, forgetting=None,
           counter: MultiplyCounter | None = None) -> IncrementalState:
    """Fold one weighted ground-truth sample into every level.

    Parameters
    ----------
    sample : uncompressed features and Jacobian at the new shape estimate.
    level_moments : MomentSpec or per-level list; second-moment block used
        to weight the sample's Jacobian spread. Defaults to each level's
        training moments.
    forgetting : per-level weights lambda; the sample enters with weight
        1/lambda. ``inf`` leaves a level untouched.

    Returns a new state; levels whose small inner system cannot be
    factorised are left unchanged and counted in ``updates_skipped``.
    """
    lams = state.forgetting if forgetting is None else forgetting
    if np.isscalar(lams):
        lams = (float(lams),) * len(state.levels)
    if len(lams) != len(state.levels):
        raise ValueError("need one forgetting factor per level")

    new_levels = []
    skipped = 0
    for idx, level in enumerate(state.levels):
        lam = float(lams[idx])
        if lam <= 0:
            raise ValueError("forgetting factors must be positive")
        if not np.isfinite(lam):
            new_levels.append(level)
            continue
        if isinstance(level_moments, (list, tuple)):
            moments = level_moments[idx]
        elif level_moments is not None:
            moments = level_moments
        else:
            moments = level.moments
        feats = level.pca.project(sample.features)
        jac = level.pca.project_jacobian(sample.jacobian)
        block = np.hstack([feats[:, None], jac])
        updated = _update_level(level, block, lam, moments, state.refresh_every, counter)
        if updated is None:
            skipped += 1
            new_levels.append(level)
        else:
            new_levels.append(updated)
    return replace(state, levels=tuple(new_levels),
                   updates_applied=state.updates_applied + 1,
                   updates_skipped=state.updates_skipped + skipped)


@dataclass(frozen=True)
class CostProfile:
    """Predicted and measured multiply counts for one online update."""

    feature_dim: int
    target_dim: int
    draws: int
    predicted_incremental: dict
    predicted_sampling: dict
    measured_incremental: dict
    measured_sampling: dict
    dominant_sampling_term: str
    reference_point: dict

    @property
    def predicted_ratio(self) -> float:
        return self.feature_dim / (3.0 * self.target_dim)

    @property
    def measured_ratio(self) -> float:
        return self.measured_sampling["total"] / self.measured_incremental["total"]


def update_cost_profile(feature_dim: int, target_dim: int, draws: int = 10,
                        seed: int = 0) -> CostProfile:
    """Instrument one incremental update and one recursive sampling update.

    Both run on synthetic state of the requested dimensions; counts are
    scalar multiplies of the dense products involved.
    """
    from contreg.oracle import isdm_update

    rng = np.random.default_rng(seed)
    d, m = feature_dim, target_dim

    # synthetic incremental level in an uncompressed feature space
    base = rng.standard_normal((d, d + m + 1))
    cov = base @ base.T / (d + m + 1) + np.eye(d)
    inv_cov = np.linalg.inv(cov)
    mix = rng.standard_normal((m, m))
    moments = MomentSpec(mean=0.1 * rng.standard_normal(m),
                         covariance=mix @ mix.T / m + 0.1 * np.eye(m))
    identity_pca = PcaModel(mean=np.zeros(d), components=np.eye(d),
                            eigenvalues=np.ones(d))
    level = LevelState(
        regressor=rng.standard_normal((m, d)), inv_cov=inv_cov, cov=cov,
        cross_sum=rng.standard_normal((d, m + 1)), pca=identity_pca,
        target_block=moments.augmented().target_block, moments=moments,
    )
    state = IncrementalState(levels=(level,), forgetting=(0.05,), refresh_every=0)
    sample = GroundTruthSample(features=rng.standard_normal(d),
                               jacobian=rng.standard_normal((d, m)))
    inc_counter = MultiplyCounter()
    update(state, sample, counter=inc_counter)

    # recursive sampling update with an intercepted feature dimension
    da = d + 1
    gram = rng.standard_normal((da, 2 * da))
    inv_gram = np.linalg.inv(gram @ gram.T / (2 * da) + np.eye(da))
    sdm_counter = MultiplyCounter()
    isdm_update(rng.standard_normal((m, da)), inv_gram,
                rng.standard_normal((da, draws)), rng.standard_normal((m, draws)),
                counter=sdm_counter)
    dominant_label, _ = sdm_counter.dominant()

    full_scale = {"point_dim": 132, "param_dim": 24,
                  "point_inner_inverse": (132 + 1) ** 3,
                  "param_inner_inverse": (24 + 1) ** 3}
    return CostProfile(
        feature_dim=d, target_dim=m, draws=draws,
        predicted_incremental={"m_d2": 3 * m * d**2, "m2_d": 3 * m**2 * d, "m3": m**3},
        predicted_sampling={"d3": d**3},
        measured_incremental={"total": inc_counter.total, "terms": dict(inc_counter.terms)},
        measured_sampling={"total": sdm_counter.total, "terms": dict(sdm_counter.terms)},
        dominant_sampling_term=dominant_label,
        reference_point=full_scale,
    )
