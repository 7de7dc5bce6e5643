"""Landmark alignment by expected-loss least squares over shape perturbations.

The library trains cascades of linear regressors whose training objective
integrates feature responses over a continuous distribution of shape
displacements instead of sampling them, supports rank-limited incremental
updates of the trained cascade, and ships a sampling-based reference
implementation plus a synthetic tracking benchmark.
"""

from contreg.shapes import (
    PdmModel,
    ShapeParams,
    apply_similarity,
    build_pdm,
    compose_shape,
    fit_params,
    rmse,
    shape_jacobian,
)
from contreg.features import (
    EXTRACTIONS,
    FeatureConfig,
    Image,
    PcaModel,
    empirical_jacobian,
    extract,
    functional_pca,
    param_jacobian,
    read_pgm,
    taylor_predict,
    taylor_validity,
    write_pgm,
)
from contreg.solver import (
    AugmentedMoments,
    GroundTruthSample,
    MomentSpec,
    expected_loss,
    functional_covariance,
    functional_cross_covariance,
    solve_correlated,
    solve_uncorrelated,
)
from contreg.oracle import (
    PerturbationSet,
    draw_perturbations,
    isdm_update,
    taylor_sampling_regression,
    train_sampling_regressor,
)
from contreg.cascade import (
    CascadeModel,
    TrainingCache,
    apply_cascade,
    retrain_from_cache,
    sampling_cost_report,
    train_ccr,
    train_sdm,
)
from contreg.container import load_model, save_model
from contreg.incremental import (
    IncrementalState,
    init_incremental,
    update,
    update_cost_profile,
)
from contreg.tracker import (
    GateConfig,
    GeneratorConfig,
    SyntheticSequence,
    TrackRecord,
    anchor_offset_moments,
    ced_auc,
    fit_quality,
    frame_statistics,
    generate_sequence,
    read_sequence,
    track,
    write_sequence,
)

__version__ = "0.1.0"
