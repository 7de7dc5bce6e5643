"""Synthetic deformable-landmark sequences and the tracking loop.

The generator renders smooth bump textures attached to a randomly walking
deformable constellation, so appearance is informative of landmark
position, scale and rotation. The tracker refines frame-to-frame with a
trained cascade, monitors a feature-space fit score to trigger
re-initialisation, and in online mode folds confident frames back into
the model with person-specific displacement statistics.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from contreg.cascade import CascadeModel, PARAM_SPACE, apply_cascade
from contreg.features import Image, extract_raw, param_jacobian, read_pgm, write_pgm
from contreg.incremental import IncrementalState, init_incremental, update
from contreg.shapes import (
    PdmModel,
    RIGID_DIM,
    ShapeParams,
    as_shape,
    compose_shape,
    fit_params,
    rmse,
    shape_xy,
)
from contreg.solver import GroundTruthSample, MomentSpec

GT_FILENAME = "gt.txt"
FRAME_PATTERN = "frame_{:06d}.pgm"


# ---------------------------------------------------------------------------
# synthetic sequences


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the synthetic sequence generator.

    Walk fields parameterise the per-frame random-walk increments of the
    generator's shape parameters; appearance fields control the rendered
    texture and its optional slow change over time.
    """

    image_size: int = 96
    n_points: int = 8
    ring_radius: float = 26.0
    n_flex: int = 3
    shape_seed: int = 7
    appearance_seed: int | None = None  # None reuses shape_seed
    n_frames: int = 150
    # per-sequence base pose spread
    base_scale_jitter: float = 0.04
    base_angle_jitter: float = 0.08
    base_translation_jitter: float = 3.0
    base_flex_jitter: float = 0.8
    # random-walk increment moments
    walk_scale_std: float = 0.0
    walk_angle_std: float = 0.0
    walk_translation_std: float = 0.0
    walk_flex_std: float = 0.0
    walk_translation_mean: tuple = (0.0, 0.0)
    walk_corr: float = 0.0
    # mean reversion toward the base pose; keeps heavy walks inside the frame
    walk_revert: float = 0.0
    # appearance
    background_bumps: int = 12
    background_amplitude: float = 0.2
    landmark_amplitude: float = 0.55
    landmark_sigma: float = 3.0
    # per-identity landmark texture variation (0 = every identity looks alike)
    landmark_amp_jitter: float = 0.0
    landmark_sigma_jitter: float = 0.0
    landmark_anisotropy: float = 0.0
    satellites: int = 2
    satellite_radius: float = 5.0
    satellite_amplitude: float = 0.3
    satellite_sigma: float = 2.2
    illumination_ramp: float = 0.0
    appearance_drift: float = 0.0
    amplitude_drift: float = 0.0
    # appearance seed whose landmark texture the sequence morphs toward (-1 = off)
    identity_drift_seed: int = -1
    # fraction of the sequence over which drift ramps up; it holds constant after
    drift_completion: float = 1.0
    margin: float = 12.0

    @property
    def param_dim(self) -> int:
        return RIGID_DIM + self.n_flex

    @property
    def outer_indices(self) -> tuple[int, int]:
        return 0, self.n_points // 2

    def walk_mean(self) -> np.ndarray:
        mean = np.zeros(self.param_dim)
        mean[2:4] = self.walk_translation_mean
        return mean

    def walk_covariance(self) -> np.ndarray:
        stds = np.concatenate([
            [self.walk_scale_std, self.walk_angle_std,
             self.walk_translation_std, self.walk_translation_std],
            np.full(self.n_flex, self.walk_flex_std),
        ])
        corr = np.eye(self.param_dim)
        c = self.walk_corr
        if c:
            corr[2, 3] = corr[3, 2] = c            # translation pair
            flex = slice(RIGID_DIM, self.param_dim)
            block = np.full((self.n_flex, self.n_flex), c)
            np.fill_diagonal(block, 1.0)
            corr[flex, flex] = block
        return np.diag(stds) @ corr @ np.diag(stds)


@dataclass(frozen=True)
class SyntheticSequence:
    frames: list
    gt_params: list
    pdm: PdmModel
    config: GeneratorConfig
    seed: int
    truncated: bool = False
    notice: str | None = None

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def gt_shapes(self) -> list:
        return [compose_shape(self.pdm, p) for p in self.gt_params]

    def param_matrix(self) -> np.ndarray:
        return np.stack([p.vector() for p in self.gt_params])


def _orthonormal_flex_basis(mean_shape: np.ndarray, n_flex: int, seed: int) -> np.ndarray:
    """Random deformation modes orthogonal to the similarity directions."""
    rng = np.random.default_rng(seed)
    dim = mean_shape.size
    n = dim // 2
    x, y = shape_xy(mean_shape)
    forbidden = [
        np.concatenate([np.ones(n), np.zeros(n)]),
        np.concatenate([np.zeros(n), np.ones(n)]),
        mean_shape.copy(),
        np.concatenate([-y, x]),
    ]
    basis = []
    while len(basis) < n_flex:
        candidate = rng.standard_normal(dim)
        for other in forbidden + basis:
            candidate -= (candidate @ other) / (other @ other) * other
        norm = np.linalg.norm(candidate)
        if norm > 1e-6:
            basis.append(candidate / norm)
    return np.stack(basis, axis=1)


def generator_pdm(cfg: GeneratorConfig) -> PdmModel:
    """Ring-shaped mean constellation with seeded deformation modes."""
    angles = 2.0 * np.pi * np.arange(cfg.n_points) / cfg.n_points
    mean = np.concatenate([cfg.ring_radius * np.cos(angles),
                           cfg.ring_radius * np.sin(angles)])
    basis = _orthonormal_flex_basis(mean, cfg.n_flex, cfg.shape_seed)
    return PdmModel(mean_shape=mean, basis=basis)


def _covariance_root(cov: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(cov)
    return eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def _render_frame(cfg: GeneratorConfig, grid, shape: np.ndarray, rigid: np.ndarray,
                  satellites: np.ndarray, background: np.ndarray,
                  landmark_style: np.ndarray, progress: float) -> Image:
    """Sum of Gaussian bumps: static background plus shape-attached texture."""
    ys, xs = grid
    n = cfg.n_points
    sx, sy = shape_xy(shape)
    if cfg.drift_completion < 1.0:
        progress = min(progress / max(cfg.drift_completion, 1e-9), 1.0)

    centers_x = [background[:, 0]]
    centers_y = [background[:, 1]]
    sigmas = [background[:, 2]]
    amps = [background[:, 3]]

    if cfg.satellites:
        drift_angle = cfg.appearance_drift * progress * max(cfg.n_frames - 1, 1)
        sat_gain = 1.0 + cfg.amplitude_drift * progress
        ang = satellites[:, :, 0] + drift_angle
        rad = satellites[:, :, 1]
        local_x = (rad * np.cos(ang)).ravel()
        local_y = (rad * np.sin(ang)).ravel()
        # satellites ride the similarity transform of the current pose
        a = rigid[0] * np.cos(rigid[1])
        b = rigid[0] * np.sin(rigid[1])
        centers_x.append(np.repeat(sx, cfg.satellites) + a * local_x - b * local_y)
        centers_y.append(np.repeat(sy, cfg.satellites) + b * local_x + a * local_y)
        sigmas.append(np.full(n * cfg.satellites, cfg.satellite_sigma))
        amps.append(satellites[:, :, 2].ravel() * sat_gain)

    cx = np.concatenate(centers_x)
    cy = np.concatenate(centers_y)
    sg = np.concatenate(sigmas)
    am = np.concatenate(amps)
    bumps = am[:, None, None] * np.exp(
        -((xs[None] - cx[:, None, None]) ** 2 + (ys[None] - cy[:, None, None]) ** 2)
        / (2.0 * sg[:, None, None] ** 2)
    )
    pixels = bumps.sum(axis=0)

    # landmark bumps carry the identity: per-point amplitude, widths, and an
    # anisotropy axis that rides the current in-plane rotation
    amp, su, sv, phi = (landmark_style[:, k] for k in range(4))
    ang = phi + rigid[1]
    dx = xs[None] - sx[:, None, None]
    dy = ys[None] - sy[:, None, None]
    cphi = np.cos(ang)[:, None, None]
    sphi = np.sin(ang)[:, None, None]
    u = dx * cphi + dy * sphi
    v = -dx * sphi + dy * cphi
    lm = amp[:, None, None] * np.exp(
        -(u ** 2 / (2.0 * su[:, None, None] ** 2)
          + v ** 2 / (2.0 * sv[:, None, None] ** 2)))
    pixels = pixels + lm.sum(axis=0)
    gain = 1.0 + cfg.illumination_ramp * progress
    return Image(pixels=np.clip(pixels * gain, 0.0, 1.0))


def _appearance(cfg: GeneratorConfig, app_seed: int):
    """Draw one identity's satellite layout, background, and landmark texture."""
    app_rng = np.random.default_rng(app_seed)
    satellites = np.zeros((cfg.n_points, max(cfg.satellites, 1), 3))
    if cfg.satellites:
        satellites = np.stack([
            app_rng.uniform(0.0, 2.0 * np.pi, (cfg.n_points, cfg.satellites)),
            cfg.satellite_radius * app_rng.uniform(0.75, 1.25, (cfg.n_points, cfg.satellites)),
            cfg.satellite_amplitude * app_rng.uniform(0.7, 1.3, (cfg.n_points, cfg.satellites)),
        ], axis=2)
    background = np.zeros((max(cfg.background_bumps, 1), 4))
    if cfg.background_bumps:
        background = np.stack([
            app_rng.uniform(0, cfg.image_size - 1, cfg.background_bumps),
            app_rng.uniform(0, cfg.image_size - 1, cfg.background_bumps),
            app_rng.uniform(3.0, 9.0, cfg.background_bumps),
            cfg.background_amplitude * app_rng.uniform(0.4, 1.0, cfg.background_bumps),
        ], axis=1)
    amp = cfg.landmark_amplitude * (
        1.0 + cfg.landmark_amp_jitter * app_rng.uniform(-1.0, 1.0, cfg.n_points))
    sig_u = cfg.landmark_sigma * (
        1.0 + cfg.landmark_sigma_jitter * app_rng.uniform(-1.0, 1.0, cfg.n_points))
    ratio = 1.0 + cfg.landmark_anisotropy * app_rng.uniform(0.0, 1.0, cfg.n_points)
    landmark_style = np.stack([
        amp, sig_u, sig_u / ratio, app_rng.uniform(0.0, np.pi, cfg.n_points),
    ], axis=1)
    return satellites, background, landmark_style


def _in_bounds(cfg: GeneratorConfig, shape: np.ndarray) -> bool:
    x, y = shape_xy(shape)
    lo, hi = cfg.margin, cfg.image_size - 1 - cfg.margin
    return bool(np.all((x >= lo) & (x <= hi) & (y >= lo) & (y <= hi)))


def generate_sequence(cfg: GeneratorConfig, seed: int) -> SyntheticSequence:
    """Render one seeded sequence; truncates early if landmarks leave the frame."""
    rng = np.random.default_rng(seed)
    pdm = generator_pdm(cfg)
    center = (cfg.image_size - 1) / 2.0

    rigid = np.array([
        max(1.0 + cfg.base_scale_jitter * rng.standard_normal(), 0.2),
        cfg.base_angle_jitter * rng.standard_normal(),
        center + cfg.base_translation_jitter * rng.standard_normal(),
        center + cfg.base_translation_jitter * rng.standard_normal(),
    ])
    flex = cfg.base_flex_jitter * rng.standard_normal(cfg.n_flex)
    params = ShapeParams(rigid=rigid, flex=flex)

    # texture identity is shared by all sequences of a config, so that a model
    # trained on some sequences generalises to held-out ones
    app_seed = cfg.shape_seed if cfg.appearance_seed is None else cfg.appearance_seed
    satellites, background, landmark_style = _appearance(cfg, app_seed)
    target_style = None
    if cfg.identity_drift_seed >= 0:
        target_style = _appearance(cfg, cfg.identity_drift_seed)[2]

    walk_root = _covariance_root(cfg.walk_covariance())
    walk_mean = cfg.walk_mean()
    grid = np.mgrid[0:cfg.image_size, 0:cfg.image_size].astype(np.float64)

    frames, gt_params = [], []
    truncated, notice = False, None
    denom = max(cfg.n_frames - 1, 1)
    anchor = params.vector()
    for t in range(cfg.n_frames):
        if t > 0:
            step = walk_mean + walk_root @ rng.standard_normal(cfg.param_dim)
            vec = params.vector() + step
            if cfg.walk_revert:
                vec -= cfg.walk_revert * (params.vector() - anchor)
            vec[0] = max(vec[0], 0.05)
            params = ShapeParams.from_vector(vec, cfg.n_flex)
        shape = compose_shape(pdm, params)
        if not _in_bounds(cfg, shape):
            truncated = True
            notice = f"landmarks left the frame margin at frame {t}; sequence truncated"
            break
        style = landmark_style
        if target_style is not None:
            p = t / denom
            if cfg.drift_completion < 1.0:
                p = min(p / max(cfg.drift_completion, 1e-9), 1.0)
            style = (1.0 - p) * landmark_style + p * target_style
        frames.append(_render_frame(cfg, grid, shape, params.rigid,
                                    satellites, background, style,
                                    t / denom))
        gt_params.append(params)
    return SyntheticSequence(frames=frames, gt_params=gt_params, pdm=pdm, config=cfg,
                             seed=seed, truncated=truncated, notice=notice)


def write_sequence(seq: SyntheticSequence, directory):
    """Write frames as 16-bit PGM plus a plain-text ground-truth table."""
    os.makedirs(directory, exist_ok=True)
    shapes = seq.gt_shapes()
    with open(os.path.join(directory, GT_FILENAME), "w") as fh:
        for t, shape in enumerate(shapes):
            coords = " ".join(f"{v:.17g}" for v in shape)
            fh.write(f"{t} {coords}\n")
    for t, frame in enumerate(seq.frames):
        write_pgm(os.path.join(directory, FRAME_PATTERN.format(t)), frame)


def read_sequence(directory) -> tuple[list, list]:
    """Read frames and ground-truth shapes written by ``write_sequence``."""
    gt_path = os.path.join(directory, GT_FILENAME)
    shapes = []
    with open(gt_path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            shapes.append(np.array([float(v) for v in parts[1:]]))
    frames = [read_pgm(os.path.join(directory, FRAME_PATTERN.format(t)))
              for t in range(len(shapes))]
    return frames, shapes


# ---------------------------------------------------------------------------
# displacement statistics


def pooled_deltas(param_sequences, lags=(1, 2, 3)) -> np.ndarray:
    """Stack parameter differences at every requested frame lag."""
    rows = []
    for seq in param_sequences:
        mat = np.asarray(seq, dtype=np.float64)
        for lag in lags:
            if mat.shape[0] > lag:
                rows.append(mat[lag:] - mat[:-lag])
    if not rows:
        raise ValueError("sequences are too short for the requested lags")
    return np.vstack(rows)


def frame_statistics(param_sequences, lags=(1, 2, 3)) -> MomentSpec:
    """Mean and covariance of frame-to-frame parameter changes, pooled over lags."""
    deltas = pooled_deltas(param_sequences, lags)
    mean = deltas.mean(axis=0)
    if deltas.shape[0] > 1:
        cov = np.atleast_2d(np.cov(deltas, rowvar=False, ddof=1))
    else:
        cov = np.zeros((deltas.shape[1], deltas.shape[1]))
    return MomentSpec(mean=mean, covariance=0.5 * (cov + cov.T))


def anchor_offset_moments(stats: MomentSpec) -> MomentSpec:
    """Reorient forward step statistics as the anchor's offset from the target.

    Training perturbations displace the anchor away from the target, while a
    tracking anchor trails the motion by one step, so the expected offset is
    the negated mean step. The covariance is unchanged.
    """
    return MomentSpec(mean=-stats.mean, covariance=stats.covariance)


# ---------------------------------------------------------------------------
# tracking


@dataclass(frozen=True)
class GateConfig:
    """Fit-quality gates, update pacing and the synthetic re-detection jitter."""

    update_threshold: float = 0.35
    loss_threshold: float = 0.60
    update_spacing: int = 3
    window: int = 50
    min_window: int = 10
    reinit_scale_jitter: float = 0.02
    reinit_angle_jitter: float = 0.03
    reinit_translation_jitter: float = 1.5
    seed: int = 0


@dataclass(frozen=True)
class FrameRecord:
    index: int
    estimate: np.ndarray | None
    error: float
    reinit: bool
    updated: bool


@dataclass
class TrackRecord:
    mode: str
    frames: list = field(default_factory=list)

    def errors(self) -> np.ndarray:
        return np.array([f.error for f in self.frames])

    @property
    def n_reinits(self) -> int:
        return sum(f.reinit for f in self.frames)

    @property
    def n_updates(self) -> int:
        return sum(f.updated for f in self.frames)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("frame,rmse,reinit,updated\n")
            for rec in self.frames:
                fh.write(f"{rec.index},{rec.error:.17g},{int(rec.reinit)},{int(rec.updated)}\n")

    @classmethod
    def from_csv(cls, path, mode: str = "") -> "TrackRecord":
        record = cls(mode=mode)
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("frame,"):
                raise ValueError(f"not a track record: {path}")
            for line in fh:
                idx, err, reinit, updated = line.strip().split(",")
                record.frames.append(FrameRecord(
                    index=int(idx), estimate=None, error=float(err),
                    reinit=bool(int(reinit)), updated=bool(int(updated)),
                ))
        return record


def fit_quality(image: Image, shape, model: CascadeModel) -> float:
    """Relative feature-space residual after compression, low = plausible fit."""
    feats = extract_raw(image, as_shape(shape), model.feature_config)
    pca = model.levels[-1].pca
    centred = feats - pca.mean
    residual = centred - pca.components @ (pca.components.T @ centred)
    return float(np.linalg.norm(residual) / max(np.linalg.norm(feats), 1e-12))


def _window_moments(buffer, offline: MomentSpec, gate: GateConfig) -> MomentSpec:
    """Anchor-offset statistics of consecutive-frame deltas in the window.

    Deltas are taken previous-minus-next so they share the orientation of
    ``offline`` and of the moments the regressors were trained on.
    """
    deltas = [
        buffer[i][1] - buffer[i + 1][1]
        for i in range(len(buffer) - 1)
        if buffer[i + 1][0] - buffer[i][0] == 1
    ]
    if len(deltas) < 2:
        return offline
    arr = np.asarray(deltas)
    mean = arr.mean(axis=0)
    cov = np.atleast_2d(np.cov(arr, rowvar=False, ddof=1))
    if len(deltas) < gate.min_window:
        w = len(deltas) / gate.min_window
        mean = w * mean + (1.0 - w) * offline.mean
        cov = w * cov + (1.0 - w) * offline.covariance
    return MomentSpec(mean=mean, covariance=0.5 * (cov + cov.T))


def _level_scaled_moments(model: CascadeModel, window: MomentSpec) -> list:
    """Rescale window statistics to each level's trained residual magnitude.

    The window measures frame-to-frame displacements, which is what the
    first level corrects; deeper levels were trained for the shrunken
    residuals left by earlier levels, so the window moments are scaled
    down by each level's trained spread ratio before entering its update.
    """
    base = float(np.trace(model.levels[0].moments.covariance))
    scaled = [window]
    for level in model.levels[1:]:
        if base <= 0.0:
            scaled.append(window)
            continue
        ratio = max(float(np.trace(level.moments.covariance)) / base, 0.0)
        scaled.append(MomentSpec(mean=window.mean * np.sqrt(ratio),
                                 covariance=window.covariance * ratio))
    return scaled


def _jittered(params: ShapeParams, gate: GateConfig, rng) -> ShapeParams:
    rigid = params.rigid.copy()
    rigid[0] = max(rigid[0] * (1.0 + gate.reinit_scale_jitter * rng.standard_normal()), 1e-3)
    rigid[1] += gate.reinit_angle_jitter * rng.standard_normal()
    rigid[2] += gate.reinit_translation_jitter * rng.standard_normal()
    rigid[3] += gate.reinit_translation_jitter * rng.standard_normal()
    return ShapeParams(rigid=rigid, flex=params.flex.copy())


def track(model: CascadeModel, frames, gt_shapes, outer, mode: str = "ccr",
          gate: GateConfig | None = None, state: IncrementalState | None = None,
          offline_moments: MomentSpec | None = None,
          forgetting=None) -> TrackRecord:
    """Track a sequence frame to frame.

    Each frame starts from the previous estimate and runs one cascade
    pass. A high fit score marks loss of track and the next frame restarts
    from a jittered ground-truth pose (the synthetic stand-in for a
    detector). In "iccr" mode, confident frames at least
    ``gate.update_spacing`` apart are folded into the regressors using
    displacement statistics from a sliding window of accepted frames.

    ``outer`` gives the landmark index pair that normalises the error.
    ``offline_moments`` must describe the anchor's offset from the target
    (see ``anchor_offset_moments``); it defaults to the moments the first
    cascade level was trained on.
    """
    if model.space != PARAM_SPACE:
        raise ValueError("tracking needs a parameter-space model")
    if mode not in ("ccr", "iccr", "sdm"):
        raise ValueError(f"unknown tracking mode {mode!r}")
    if len(frames) != len(gt_shapes) or not frames:
        raise ValueError("need matching, non-empty frame and ground-truth lists")
    gate = gate or GateConfig()
    if mode == "iccr" and state is None:
        state = init_incremental(model) if forgetting is None \
            else init_incremental(model, forgetting)
    if offline_moments is None:
        offline_moments = model.levels[0].moments

    rng = np.random.default_rng(gate.seed)
    record = TrackRecord(mode=mode)
    buffer: list[tuple[int, np.ndarray]] = []
    last_update = -10**9
    pending_reinit = True  # first frame initialises from the detector stand-in
    prev: ShapeParams | None = None

    for t, (frame, gt_shape) in enumerate(zip(frames, gt_shapes)):
        gt_shape = as_shape(gt_shape)
        reinit = False
        if pending_reinit:
            anchor = fit_params(model.pdm, gt_shape)
            init = _jittered(anchor, gate, rng) if t > 0 else anchor
            reinit = t > 0
            pending_reinit = False
        else:
            init = prev
        regressors = state.regressors if (mode == "iccr" and state is not None) else None
        est = apply_cascade(model, frame, init, regressors=regressors)
        est_shape = compose_shape(model.pdm, est)
        err = rmse(est_shape, gt_shape, outer[0], outer[1])
        score = fit_quality(frame, est_shape, model)

        updated = False
        if score > gate.loss_threshold:
            pending_reinit = True
        else:
            if score <= gate.update_threshold:
                buffer.append((t, est.vector()))
                if len(buffer) > gate.window + 1:
                    buffer.pop(0)
                if mode == "iccr" and t - last_update >= gate.update_spacing:
                    moments = _window_moments(buffer, offline_moments, gate)
                    feats = extract_raw(frame, est_shape, model.feature_config)
                    jac = param_jacobian(frame, model.pdm, est, model.feature_config)
                    state = update(state, GroundTruthSample(features=feats, jacobian=jac),
                                   level_moments=_level_scaled_moments(model, moments))
                    last_update = t
                    updated = True

        record.frames.append(FrameRecord(index=t, estimate=est_shape, error=err,
                                         reinit=reinit, updated=updated))
        prev = est
    return record


# ---------------------------------------------------------------------------
# evaluation


def default_thresholds() -> np.ndarray:
    """Error grid up to 0.08 in steps of 0.0005 (lowest bin one step up)."""
    return np.linspace(0.0005, 0.08, 160)


def ced_auc(records, thresholds=None) -> tuple[np.ndarray, float]:
    """Cumulative error distribution over thresholds and its normalised area.

    ``records`` is a TrackRecord, an iterable of them, or a plain error
    array. AUC is the trapezoid integral of the CED over the grid divided
    by the grid span, so a tracker with every error at or below the lowest
    threshold scores exactly 1.
    """
    if isinstance(records, TrackRecord):
        errors = records.errors()
    elif isinstance(records, np.ndarray):
        errors = records.astype(np.float64)
    else:
        items = list(records)
        if items and isinstance(items[0], TrackRecord):
            errors = np.concatenate([r.errors() for r in items])
        else:
            errors = np.asarray(items, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("no errors to evaluate")
    thresholds = default_thresholds() if thresholds is None \
        else np.asarray(thresholds, dtype=np.float64)
    if thresholds.size < 2 or np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly increasing with length >= 2")
    ced = np.array([(errors <= t).mean() for t in thresholds])
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    auc = float(trapezoid(ced, thresholds) / (thresholds[-1] - thresholds[0]))
    return ced, auc
