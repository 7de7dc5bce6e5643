"""Patch features around landmarks and their empirical derivatives.

Descriptors are concatenations of per-landmark blocks computed from a
square patch centred on each landmark (raw pixels or a small oriented
gradient histogram), so a landmark only influences its own block. That
block structure lets the full feature Jacobian w.r.t. landmark positions
be assembled from four shifted extractions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from contreg.shapes import PdmModel, ShapeParams, as_shape, compose_shape, shape_jacobian
from contreg.solver import MomentSpec

_HIST_EPS = 1e-3
_DENOM_GUARD = 1e-12


class ExtractionCounter:
    """Counts raw descriptor extractions (single process only)."""

    def __init__(self):
        self.count = 0

    def add(self, k: int = 1):
        self.count += k

    def reset(self):
        self.count = 0


EXTRACTIONS = ExtractionCounter()


@dataclass(frozen=True)
class Image:
    """Grayscale image, values in [0, 1], row-major (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError("pixels must be a non-empty 2-d array")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels contain non-finite values")
        if px.min() < -1e-9 or px.max() > 1.0 + 1e-9:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", np.clip(px, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def write_pgm(path, image: Image):
    """Write a binary 16-bit PGM (P5, big-endian samples)."""
    levels = 65535
    data = np.round(image.pixels * levels).astype(">u2")
    header = f"P5\n{image.width} {image.height}\n{levels}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_pgm(path) -> Image:
    """Read a binary PGM (P5), 8- or 16-bit."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise ValueError(f"not a binary PGM file: {path}")
    # header: magic, width, height, maxval, then a single whitespace byte
    fields, pos = [], 2
    while len(fields) < 3:
        match = re.match(rb"(?:\s+|\s*#[^\n]*\n)*(\d+)", blob[pos:])
        if match is None:
            raise ValueError(f"malformed PGM header: {path}")
        fields.append(int(match.group(1)))
        pos += match.end()
    width, height, maxval = fields
    pos += 1
    if maxval == 65535:
        raw = np.frombuffer(blob, dtype=">u2", offset=pos, count=width * height)
    elif maxval < 256:
        raw = np.frombuffer(blob, dtype=np.uint8, offset=pos, count=width * height)
    else:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    pixels = raw.astype(np.float64).reshape(height, width) / maxval
    return Image(pixels=pixels)


@dataclass(frozen=True)
class PcaModel:
    """Linear feature compression: project onto top eigenvectors after centring."""

    mean: np.ndarray         # (d,)
    components: np.ndarray   # (d, k), orthonormal columns
    eigenvalues: np.ndarray  # (k,), descending

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "components", np.asarray(self.components, dtype=np.float64))
        object.__setattr__(self, "eigenvalues", np.asarray(self.eigenvalues, dtype=np.float64))

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def project(self, features: np.ndarray) -> np.ndarray:
        return self.components.T @ (features - self.mean)

    def project_jacobian(self, jacobian: np.ndarray) -> np.ndarray:
        return self.components.T @ jacobian

    def reconstruct(self, projected: np.ndarray) -> np.ndarray:
        return self.mean + self.components @ projected


@dataclass(frozen=True)
class FeatureConfig:
    """Descriptor settings shared by extraction and Jacobian estimation."""

    descriptor: str = "gradient-histogram"
    patch_size: int = 17
    cells: int = 2
    bins: int = 6
    pca: PcaModel | None = None

    def __post_init__(self):
        if self.descriptor not in ("gradient-histogram", "raw-patch"):
            raise ValueError(f"unknown descriptor {self.descriptor!r}")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and positive")
        if self.descriptor == "gradient-histogram" and (self.cells < 1 or self.bins < 2):
            raise ValueError("need at least one cell and two orientation bins")

    @property
    def block_size(self) -> int:
        """Descriptor length contributed by one landmark."""
        if self.descriptor == "raw-patch":
            return self.patch_size**2
        return self.cells * self.cells * self.bins

    def with_pca(self, pca: PcaModel | None) -> "FeatureConfig":
        return FeatureConfig(descriptor=self.descriptor, patch_size=self.patch_size,
                             cells=self.cells, bins=self.bins, pca=pca)

    def feature_dim(self, n_points: int) -> int:
        if self.pca is not None:
            return self.pca.n_components
        return n_points * self.block_size


def _sample_bilinear(image: Image, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup with replicate behaviour outside the image."""
    px = image.pixels
    h, w = px.shape
    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    top = (1.0 - fx) * px[y0, x0] + fx * px[y0, x1]
    bottom = (1.0 - fx) * px[y1, x0] + fx * px[y1, x1]
    return (1.0 - fy) * top + fy * bottom


def _patch_grids(image: Image, shape: np.ndarray, half_extent: int) -> np.ndarray:
    """Sampled square grids of side 2*half_extent+1 around every landmark."""
    n = shape.size // 2
    offs = np.arange(-half_extent, half_extent + 1, dtype=np.float64)
    xs = shape[:n, None, None] + offs[None, None, :]
    ys = shape[n:, None, None] + offs[None, :, None]
    side = offs.size
    return _sample_bilinear(image,
                            np.broadcast_to(xs, (n, side, side)),
                            np.broadcast_to(ys, (n, side, side)))


def _descriptor_blocks(image: Image, shape: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Per-landmark descriptor blocks, (n, block_size)."""
    n = shape.size // 2
    half = cfg.patch_size // 2
    if cfg.descriptor == "raw-patch":
        patches = _patch_grids(image, shape, half)
        return patches.reshape(n, -1)

    # oriented gradient histogram: sample one extra ring for central differences
    grids = _patch_grids(image, shape, half + 1)
    gx = 0.5 * (grids[:, 1:-1, 2:] - grids[:, 1:-1, :-2])
    gy = 0.5 * (grids[:, 2:, 1:-1] - grids[:, :-2, 1:-1])
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)

    side = cfg.patch_size
    cell_of = (np.arange(side) * cfg.cells) // side
    cell_row = np.broadcast_to(cell_of[None, :, None], mag.shape)
    cell_col = np.broadcast_to(cell_of[None, None, :], mag.shape)
    land = np.broadcast_to(np.arange(n)[:, None, None], mag.shape)

    # soft assignment between the two nearest orientation bin centres
    pos = theta / np.pi * cfg.bins - 0.5
    low = np.floor(pos)
    frac = pos - low
    bin_lo = low.astype(np.intp) % cfg.bins
    bin_hi = (bin_lo + 1) % cfg.bins

    hist = np.zeros((n, cfg.cells, cfg.cells, cfg.bins))
    np.add.at(hist, (land, cell_row, cell_col, bin_lo), mag * (1.0 - frac))
    np.add.at(hist, (land, cell_row, cell_col, bin_hi), mag * frac)
    blocks = hist.reshape(n, -1)
    norms = np.sqrt(np.sum(blocks**2, axis=1, keepdims=True) + _HIST_EPS**2)
    return blocks / norms


def extract_raw(image: Image, shape, cfg: FeatureConfig) -> np.ndarray:
    """Descriptor without PCA compression. Counts one extraction."""
    shape = as_shape(shape)
    EXTRACTIONS.add(1)
    return _descriptor_blocks(image, shape, cfg).ravel()


def extract(image: Image, shape, cfg: FeatureConfig) -> np.ndarray:
    """Concatenated landmark descriptor, PCA-compressed when configured."""
    features = extract_raw(image, shape, cfg)
    if cfg.pca is not None:
        return cfg.pca.project(features)
    return features


def empirical_jacobian(image: Image, shape, cfg: FeatureConfig, step: float = 1.0) -> np.ndarray:
    """Central-difference derivative of the descriptor w.r.t. landmark coordinates.

    Because descriptor blocks are per-landmark, shifting every landmark at
    once perturbs each block only through its own landmark, so the full
    (d, 2n) Jacobian costs four extractions regardless of n.
    """
    shape = as_shape(shape)
    if step <= 0:
        raise ValueError("step must be positive")
    n = shape.size // 2
    block = cfg.block_size

    def shifted(dx: float, dy: float) -> np.ndarray:
        moved = shape.copy()
        moved[:n] += dx
        moved[n:] += dy
        return extract_raw(image, moved, cfg).reshape(n, block)

    dx_cols = (shifted(step, 0.0) - shifted(-step, 0.0)) / (2.0 * step)
    dy_cols = (shifted(0.0, step) - shifted(0.0, -step)) / (2.0 * step)

    jac = np.zeros((n * block, 2 * n))
    rows = np.arange(block)
    for i in range(n):
        jac[i * block + rows, i] = dx_cols[i]
        jac[i * block + rows, n + i] = dy_cols[i]
    if cfg.pca is not None:
        return cfg.pca.project_jacobian(jac)
    return jac


def param_jacobian(image: Image, pdm: PdmModel, params: ShapeParams,
                   cfg: FeatureConfig, step: float = 1.0) -> np.ndarray:
    """Descriptor derivative w.r.t. shape-model parameters via the chain rule."""
    shape = compose_shape(pdm, params)
    point_jac = empirical_jacobian(image, shape, cfg, step=step)
    return point_jac @ shape_jacobian(pdm, params)


def taylor_predict(features: np.ndarray, jacobian: np.ndarray, delta) -> np.ndarray:
    """First-order feature prediction under a displacement."""
    delta = np.asarray(delta, dtype=np.float64)
    return features + jacobian @ delta


def taylor_validity(image: Image, shape, taylor_deltas, eval_deltas,
                    cfg: FeatureConfig) -> np.ndarray:
    """Normalised distances between predicted and measured perturbed features.

    Entry (i, j) compares the first-order prediction under
    ``taylor_deltas[i]`` with features extracted at the shape displaced by
    ``eval_deltas[j]``; the diagonal of a shared delta set measures how far
    the linearisation holds. Entries whose denominator vanishes are NaN.
    """
    shape = as_shape(shape)
    taylor_deltas = np.atleast_2d(np.asarray(taylor_deltas, dtype=np.float64))
    eval_deltas = np.atleast_2d(np.asarray(eval_deltas, dtype=np.float64))
    base = extract_raw(image, shape, cfg)
    jac = empirical_jacobian(image, shape, cfg)
    if cfg.pca is not None:
        base = cfg.pca.project(base)
    predicted = base[None, :] + taylor_deltas @ jac.T
    measured = np.stack([extract(image, shape + d, cfg) for d in eval_deltas])
    dist = np.empty((taylor_deltas.shape[0], eval_deltas.shape[0]))
    for i in range(predicted.shape[0]):
        diff = np.linalg.norm(measured - predicted[i], axis=1)
        denom = np.linalg.norm(measured + predicted[i], axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            dist[i] = np.where(denom < _DENOM_GUARD, np.nan, diff / denom)
    return dist


def functional_pca(samples, moments: MomentSpec, n_components: int) -> PcaModel:
    """Principal directions of linearised features under displacement moments.

    The feature covariance is evaluated in closed form from ground-truth
    features and Jacobians (averaged over images, centred on the expected
    feature vector), so no perturbed images are sampled.

    Raises if ``n_components`` exceeds the numerical rank.
    """
    if not samples:
        raise ValueError("need at least one ground-truth sample")
    n_images = len(samples)
    block = moments.augmented().second_moment
    d = samples[0].features.size
    mean = np.zeros(d)
    second = np.zeros((d, d))
    for s in samples:
        mean += s.features + s.jacobian @ moments.mean
        sb = s.block
        second += sb @ block @ sb.T
    mean /= n_images
    cov = second / n_images - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    rank = int(np.sum(eigvals > max(eigvals[0], 0.0) * 1e-12))
    if n_components > rank:
        raise ValueError(f"n_components={n_components} exceeds covariance rank {rank}")
    comps = eigvecs[:, :n_components]
    # deterministic sign convention
    for k in range(comps.shape[1]):
        pivot = np.argmax(np.abs(comps[:, k]))
        if comps[pivot, k] < 0:
            comps[:, k] = -comps[:, k]
    return PcaModel(mean=mean, components=comps, eigenvalues=eigvals[:n_components].copy())
