"""Planar landmark shapes and the linear deformable shape model.

A shape is a flat float64 vector ``(x_1..x_n, y_1..y_n)`` in pixel units.
The shape model composes a similarity transform (scale, rotation,
translation) with a linear deformation basis; model parameters are the
four rigid numbers followed by the deformation coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RIGID_DIM = 4  # scale, angle, tx, ty

_PROCRUSTES_TOL = 1e-8
_PROCRUSTES_MAX_ITER = 100


def as_shape(coords) -> np.ndarray:
    """Validate a shape vector: 1-d, even non-zero length, finite."""
    s = np.asarray(coords, dtype=np.float64)
    if s.ndim != 1 or s.size == 0 or s.size % 2 != 0:
        raise ValueError(f"shape vector must be 1-d with even length, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("shape vector contains non-finite values")
    return s


def shape_xy(shape: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a shape vector into its x and y coordinate halves."""
    n = shape.size // 2
    return shape[:n], shape[n:]


@dataclass(frozen=True)
class ShapeParams:
    """Pose and deformation parameters: rigid = (scale, angle, tx, ty)."""

    rigid: np.ndarray
    flex: np.ndarray

    def __post_init__(self):
        rigid = np.asarray(self.rigid, dtype=np.float64)
        flex = np.atleast_1d(np.asarray(self.flex, dtype=np.float64))
        if rigid.shape != (RIGID_DIM,):
            raise ValueError(f"rigid block must have {RIGID_DIM} entries")
        if not (np.all(np.isfinite(rigid)) and np.all(np.isfinite(flex))):
            raise ValueError("parameters contain non-finite values")
        if rigid[0] <= 0.0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rigid", rigid)
        object.__setattr__(self, "flex", flex)

    @property
    def scale(self) -> float:
        return float(self.rigid[0])

    @property
    def angle(self) -> float:
        return float(self.rigid[1])

    @property
    def translation(self) -> np.ndarray:
        return self.rigid[2:]

    @property
    def dim(self) -> int:
        return RIGID_DIM + self.flex.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rigid, self.flex])

    @classmethod
    def from_vector(cls, vec, n_flex: int) -> "ShapeParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != RIGID_DIM + n_flex:
            raise ValueError("parameter vector has wrong length")
        return cls(rigid=vec[:RIGID_DIM].copy(), flex=vec[RIGID_DIM:].copy())


@dataclass(frozen=True)
class PdmModel:
    """Linear shape model: mean shape plus an orthonormal deformation basis."""

    mean_shape: np.ndarray  # (2n,)
    basis: np.ndarray       # (2n, n_flex), orthonormal columns

    def __post_init__(self):
        mean = as_shape(self.mean_shape)
        basis = np.asarray(self.basis, dtype=np.float64)
        if basis.ndim != 2 or basis.shape[0] != mean.size:
            raise ValueError("basis rows must match mean shape length")
        gram = basis.T @ basis
        if not np.allclose(gram, np.eye(basis.shape[1]), atol=1e-10):
            raise ValueError("deformation basis columns must be orthonormal")
        object.__setattr__(self, "mean_shape", mean)
        object.__setattr__(self, "basis", basis)

    @property
    def n_points(self) -> int:
        return self.mean_shape.size // 2

    @property
    def n_flex(self) -> int:
        return self.basis.shape[1]

    @property
    def n_params(self) -> int:
        return RIGID_DIM + self.n_flex

    def identity_params(self) -> ShapeParams:
        return ShapeParams(
            rigid=np.array([1.0, 0.0, 0.0, 0.0]),
            flex=np.zeros(self.n_flex),
        )


def apply_similarity(rigid, shape: np.ndarray) -> np.ndarray:
    """Apply scale * rotation followed by translation to every landmark."""
    rigid = np.asarray(rigid, dtype=np.float64)
    scale, angle, tx, ty = rigid
    a = scale * np.cos(angle)
    b = scale * np.sin(angle)
    x, y = shape_xy(as_shape(shape))
    return np.concatenate([a * x - b * y + tx, b * x + a * y + ty])


def chain_similarity(outer, inner) -> np.ndarray:
    """Rigid parameters of ``outer`` composed after ``inner``."""
    outer = np.asarray(outer, dtype=np.float64)
    inner = np.asarray(inner, dtype=np.float64)
    scale = outer[0] * inner[0]
    angle = outer[1] + inner[1]
    a = outer[0] * np.cos(outer[1])
    b = outer[0] * np.sin(outer[1])
    tx = a * inner[2] - b * inner[3] + outer[2]
    ty = b * inner[2] + a * inner[3] + outer[3]
    return np.array([scale, angle, tx, ty])


def compose_shape(pdm: PdmModel, params: ShapeParams) -> np.ndarray:
    """Instantiate a shape: similarity transform of mean + basis @ flex."""
    if params.flex.size != pdm.n_flex:
        raise ValueError("flex coefficient count does not match the model")
    base = pdm.mean_shape + pdm.basis @ params.flex
    return apply_similarity(params.rigid, base)


def shape_jacobian(pdm: PdmModel, params: ShapeParams) -> np.ndarray:
    """Derivative of the composed shape w.r.t. the parameter vector.

    Returns a ``(2n, 4 + n_flex)`` matrix, columns ordered like
    ``ShapeParams.vector()``.
    """
    if params.flex.size != pdm.n_flex:
        raise ValueError("flex coefficient count does not match the model")
    scale, angle = params.scale, params.angle
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    base = pdm.mean_shape + pdm.basis @ params.flex
    u, v = shape_xy(base)
    n = u.size

    jac = np.zeros((2 * n, pdm.n_params))
    # rigid columns
    jac[:n, 0] = cos_a * u - sin_a * v
    jac[n:, 0] = sin_a * u + cos_a * v
    jac[:n, 1] = scale * (-sin_a * u - cos_a * v)
    jac[n:, 1] = scale * (cos_a * u - sin_a * v)
    jac[:n, 2] = 1.0
    jac[n:, 3] = 1.0
    # deformation columns pass through the scaled rotation
    bx, by = pdm.basis[:n, :], pdm.basis[n:, :]
    jac[:n, RIGID_DIM:] = scale * (cos_a * bx - sin_a * by)
    jac[n:, RIGID_DIM:] = scale * (sin_a * bx + cos_a * by)
    return jac


def _center(shape: np.ndarray) -> np.ndarray:
    x, y = shape_xy(shape)
    return np.concatenate([x - x.mean(), y - y.mean()])


def _align_to(shape: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Least-squares similarity alignment of a centred shape to a centred reference."""
    sx, sy = shape_xy(shape)
    rx, ry = shape_xy(reference)
    norm_sq = shape @ shape
    a = (shape @ reference) / norm_sq
    b = (sx @ ry - sy @ rx) / norm_sq
    return np.concatenate([a * sx - b * sy, b * sx + a * sy])


def procrustes_mean(shapes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Generalised Procrustes alignment.

    Parameters
    ----------
    shapes : (N, 2n) array of shape vectors.

    Returns
    -------
    mean : (2n,) centred unit-norm mean shape.
    aligned : (N, 2n) similarity-aligned shapes.
    """
    shapes = np.asarray(shapes, dtype=np.float64)
    centred = np.stack([_center(s) for s in shapes])
    norms = np.linalg.norm(centred, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("degenerate shape set: zero-size shape")
    mean = centred[0] / norms[0]
    aligned = centred
    for _ in range(_PROCRUSTES_MAX_ITER):
        aligned = np.stack([_align_to(s, mean) for s in centred])
        new_mean = _center(aligned.mean(axis=0))
        nrm = np.linalg.norm(new_mean)
        if nrm < 1e-12:
            raise ValueError("degenerate shape set: vanishing mean")
        new_mean /= nrm
        if np.linalg.norm(new_mean - mean) < _PROCRUSTES_TOL:
            mean = new_mean
            break
        mean = new_mean
    aligned = np.stack([_align_to(s, mean) for s in centred])
    return mean, aligned


def build_pdm(shapes, n_flex: int) -> PdmModel:
    """Build a shape model from example shapes.

    Procrustes-aligns the shapes, then keeps the top ``n_flex`` principal
    deformation directions of the aligned residuals.
    """
    shapes = np.asarray(shapes, dtype=np.float64)
    if shapes.ndim != 2:
        raise ValueError("expected an (N, 2n) array of shapes")
    n_shapes, dim = shapes.shape
    if n_flex < 1 or n_flex > min(n_shapes - 1, dim - RIGID_DIM):
        raise ValueError(
            f"too few shapes: n_flex={n_flex} needs at least {n_flex + 1} shapes "
            f"and {n_flex + RIGID_DIM} coordinates"
        )
    mean, aligned = procrustes_mean(shapes)
    mean_aligned = aligned.mean(axis=0)
    residuals = aligned - mean_aligned
    total_var = float(np.sum(residuals**2))
    if total_var < 1e-12 * n_shapes:
        raise ValueError("degenerate shape set: no variation after alignment")
    _, svals, vt = np.linalg.svd(residuals, full_matrices=False)
    basis = vt[:n_flex].T
    # deterministic sign: largest-magnitude entry of each mode positive
    for k in range(basis.shape[1]):
        pivot = np.argmax(np.abs(basis[:, k]))
        if basis[pivot, k] < 0:
            basis[:, k] = -basis[:, k]
    return PdmModel(mean_shape=mean_aligned, basis=basis)


def _init_rigid(pdm: PdmModel, shape: np.ndarray) -> np.ndarray:
    """Closed-form similarity guess aligning the model mean to a target shape."""
    tx, ty = shape_xy(shape)
    cx, cy = tx.mean(), ty.mean()
    target = np.concatenate([tx - cx, ty - cy])
    ref = _center(pdm.mean_shape)
    norm_sq = ref @ ref
    a = (ref @ target) / norm_sq
    b_x, b_y = shape_xy(ref)
    t_x, t_y = shape_xy(target)
    b = (b_x @ t_y - b_y @ t_x) / norm_sq
    scale = max(float(np.hypot(a, b)), 1e-9)
    angle = float(np.arctan2(b, a))
    # translation maps the (centred) transformed mean onto the target centroid
    mx, my = shape_xy(pdm.mean_shape)
    ca, sa = scale * np.cos(angle), scale * np.sin(angle)
    return np.array([scale, angle, cx - (ca * mx.mean() - sa * my.mean()),
                     cy - (sa * mx.mean() + ca * my.mean())])


def fit_params(pdm: PdmModel, shape, max_iter: int = 20, tol: float = 1e-12) -> ShapeParams:
    """Gauss-Newton fit of model parameters to a target shape."""
    shape = as_shape(shape)
    if shape.size != pdm.mean_shape.size:
        raise ValueError("target shape size does not match the model")
    params = ShapeParams(rigid=_init_rigid(pdm, shape), flex=np.zeros(pdm.n_flex))
    scale_ref = np.linalg.norm(shape) + 1.0
    for _ in range(max_iter):
        residual = compose_shape(pdm, params) - shape
        jac = shape_jacobian(pdm, params)
        step, *_ = np.linalg.lstsq(jac, residual, rcond=None)
        vec = params.vector() - step
        vec[0] = max(vec[0], 1e-9)  # keep scale positive
        params = ShapeParams.from_vector(vec, pdm.n_flex)
        if np.linalg.norm(step) < tol * scale_ref:
            break
    return params


def rmse(estimate, ground_truth, outer_left: int, outer_right: int) -> float:
    """Mean landmark distance normalised by the ground-truth outer distance.

    ``outer_left``/``outer_right`` index the landmark pair whose ground-truth
    separation defines the normalisation.
    """
    est = as_shape(estimate)
    gt = as_shape(ground_truth)
    if est.size != gt.size:
        raise ValueError("estimate and ground truth have different sizes")
    n = gt.size // 2
    if not (0 <= outer_left < n and 0 <= outer_right < n) or outer_left == outer_right:
        raise ValueError("invalid outer landmark indices")
    gx, gy = shape_xy(gt)
    ex, ey = shape_xy(est)
    d_outer = np.hypot(gx[outer_left] - gx[outer_right], gy[outer_left] - gy[outer_right])
    if d_outer < 1e-12:
        raise ValueError("outer landmarks coincide in the ground truth")
    dists = np.hypot(ex - gx, ey - gy)
    return float(dists.sum() / (d_outer * n))
