"""Downward pinhole camera over a planar intensity map.

A pixel with metric sensor coordinate i (pixel offset from the principal
point times the sensor pitch) sees the world point

    p = rho_xy + R(theta) i (rho_z - e(rho_xy)) / L_f

and the expected intensity is C(p). The measurement Jacobian factors into the
map gradient times the coordinate Jacobian, so only the rho_x, rho_y, rho_z
and theta columns are ever nonzero.

Measurement grids are indexed in pixels with unit pitch: one pixel is one
unit of area in the filter integrals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from fieldekf import kernels
from fieldekf.drone import N_STATE, YAW
from fieldekf.errors import TerrainError
from fieldekf.fields import FieldGrid, ImageField, JacobianField

DEFAULT_FOCAL = 6e-3
DEFAULT_SENSOR_SPAN = 6.1e-3
JACOBIAN_COLUMNS = np.array([0, 1, 2, YAW])


def rotation_and_derivative(theta: float) -> tuple[np.ndarray, np.ndarray]:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]]), np.array([[-s, -c], [c, -s]])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal length and sensor geometry.

    ``sensor_pitch`` defaults so that the sensor spans 6.1 mm across its
    columns; ``principal`` (row, col) defaults to the image center.
    """

    rows: int = 512
    cols: int = 612
    focal: float = DEFAULT_FOCAL
    sensor_pitch: float | None = None
    principal: tuple[float, float] | None = None

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if self.sensor_pitch is None:
            object.__setattr__(self, "sensor_pitch", DEFAULT_SENSOR_SPAN / self.cols)
        if self.principal is None:
            object.__setattr__(self, "principal", ((self.rows - 1) / 2.0, (self.cols - 1) / 2.0))
        r0, c0 = self.principal
        if not (0 <= r0 <= self.rows - 1 and 0 <= c0 <= self.cols - 1):
            raise ValueError("principal point must lie inside the image")

    @property
    def grid(self) -> FieldGrid:
        return FieldGrid((self.rows, self.cols))

    def sensor_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Metric sensor coordinates along columns (i1) and rows (i2)."""
        i1 = (np.arange(self.cols) - self.principal[1]) * self.sensor_pitch
        i2 = (np.arange(self.rows) - self.principal[0]) * self.sensor_pitch
        return i1, i2

    def sensor_coordinates(self, pixel) -> np.ndarray:
        """(row, col) pixel index -> metric i = (i1, i2)."""
        pixel = np.asarray(pixel, dtype=float)
        return np.stack([(pixel[..., 1] - self.principal[1]) * self.sensor_pitch,
                         (pixel[..., 0] - self.principal[0]) * self.sensor_pitch], axis=-1)


@dataclass
class GaussianBumps:
    """Analytic intensity (offset + sum_k amp_k exp(-|p - c_k|^2 / (2 w_k^2))) * gain."""

    centers: np.ndarray  # (K, 2) world x, y
    widths: np.ndarray
    amplitudes: np.ndarray
    offset: float = 0.0
    gain: float = 1.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        self.widths = np.asarray(self.widths, dtype=float).reshape(-1)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float).reshape(-1)

    def evaluate(self, x, y, chunk: int = 4096):
        """Intensity and gradient at world points (any matching shapes)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        pts = np.stack([np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()], axis=1)
        val = np.empty(len(pts))
        grad = np.empty((len(pts), 2))
        inv2w2 = 1.0 / (2.0 * self.widths**2)
        slope = 2.0 * inv2w2 * self.amplitudes
        for lo in range(0, len(pts), chunk):
            p = pts[lo:lo + chunk]
            e = cdist(p, self.centers, "sqeuclidean")
            e *= -inv2w2
            np.exp(e, out=e)
            val[lo:lo + chunk] = e @ self.amplitudes
            # sum_k s_k e_k (p - c_k) as two matrix products
            W = e * slope
            grad[lo:lo + chunk] = W @ self.centers - p * W.sum(axis=1)[:, None]
        g = self.gain
        return ((val + self.offset) * g).reshape(shape), (grad * g).reshape(shape + (2,))


@dataclass
class MapModel:
    """Planar grayscale map over world coordinates.

    ``intensity[r, c]`` is the value at world (x, y) = (origin[1] + c * pitch[1],
    origin[0] + r * pitch[0]). Gradients are precomputed once by central
    differences (one-sided at the borders) and interpolated bilinearly.
    """

    intensity: np.ndarray
    pitch: tuple[float, float]
    origin: tuple[float, float] = (0.0, 0.0)
    elevation: np.ndarray | None = None
    analytic: GaussianBumps | None = None
    mode: str = "raster"
    grad_x: np.ndarray = field(init=False, repr=False)
    grad_y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.intensity = np.ascontiguousarray(self.intensity, dtype=float)
        if self.intensity.ndim != 2 or min(self.intensity.shape) < 2:
            raise ValueError("map raster must be 2-D and at least 2 x 2")
        if self.intensity.min() < -1e-12 or self.intensity.max() > 1 + 1e-12:
            raise ValueError("map intensities must lie in [0, 1]")
        self.pitch = tuple(float(p) for p in self.pitch)
        self.origin = tuple(float(o) for o in self.origin)
        gy, gx = np.gradient(self.intensity, self.pitch[0], self.pitch[1])
        self.grad_x = np.ascontiguousarray(gx)
        self.grad_y = np.ascontiguousarray(gy)
        if self.elevation is not None:
            self.elevation = np.ascontiguousarray(self.elevation, dtype=float)
            if self.elevation.shape != self.intensity.shape:
                raise ValueError("elevation raster must match the intensity raster")
            ey, ex = np.gradient(self.elevation, self.pitch[0], self.pitch[1])
            self._elev_grad = (np.ascontiguousarray(ex), np.ascontiguousarray(ey))
        if self.mode not in ("raster", "analytic"):
            raise ValueError(f"unknown map mode {self.mode!r}")
        if self.mode == "analytic" and self.analytic is None:
            raise ValueError("analytic mode needs an analytic map description")

    @property
    def grid(self) -> FieldGrid:
        return FieldGrid(self.intensity.shape, self.pitch, self.origin)

    @property
    def extent(self) -> tuple[float, float]:
        """(width, height) in meters."""
        H, W = self.intensity.shape
        return ((W - 1) * self.pitch[1], (H - 1) * self.pitch[0])

    def with_mode(self, mode: str) -> "MapModel":
        return MapModel(self.intensity, self.pitch, self.origin, self.elevation, self.analytic, mode)

    def _fractional(self, x, y):
        return (np.asarray(x, dtype=float) - self.origin[1]) / self.pitch[1], \
               (np.asarray(y, dtype=float) - self.origin[0]) / self.pitch[0]

    def inside(self, x, y) -> np.ndarray:
        u, v = self._fractional(x, y)
        H, W = self.intensity.shape
        return (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)

    def query(self, x, y):
        """(C(p), grad C(p) with trailing axis (d/dx, d/dy), inside flag)."""
        inside = self.inside(x, y)
        if self.mode == "analytic":
            val, grad = self.analytic.evaluate(x, y)
        else:
            u, v = self._fractional(x, y)
            val, _ = kernels.sample_bilinear(self.intensity, u, v)
            gx, _ = kernels.sample_bilinear(self.grad_x, u, v)
            gy, _ = kernels.sample_bilinear(self.grad_y, u, v)
            grad = np.stack([gx, gy], axis=-1)
        val = np.where(inside, val, 0.0)
        grad = np.where(inside[..., None], grad, 0.0)
        return val, grad, inside

    def elevation_at(self, x: float, y: float) -> tuple[float, np.ndarray]:
        """Elevation and its (d/dx, d/dy) gradient at a world point; zero without elevation data."""
        if self.elevation is None:
            return 0.0, np.zeros(2)
        u, v = self._fractional(x, y)
        H, W = self.elevation.shape
        u = float(np.clip(u, 0, W - 1))
        v = float(np.clip(v, 0, H - 1))
        e, _ = kernels.sample_bilinear(self.elevation, u, v)
        ex, _ = kernels.sample_bilinear(self._elev_grad[0], u, v)
        ey, _ = kernels.sample_bilinear(self._elev_grad[1], u, v)
        return float(e), np.array([float(ex), float(ey)])


def map_query(map_model: MapModel, p):
    """Intensity and gradient at world point(s) p[..., 2]."""
    p = np.asarray(p, dtype=float)
    return map_model.query(p[..., 0], p[..., 1])


def camera_height(x, map_model: MapModel) -> float:
    e, _ = map_model.elevation_at(x[0], x[1])
    h = float(x[2]) - e
    if not h > 0:
        raise TerrainError(f"camera is not above the terrain (height {h:.3g} m)")
    return h


def world_from_sensor(x, i, focal: float, map_model: MapModel):
    """World point(s) seen at metric sensor coordinate(s) i[..., 2]; returns (p, outside)."""
    x = np.asarray(x, dtype=float)
    h = camera_height(x, map_model)
    R, _ = rotation_and_derivative(x[YAW])
    i = np.asarray(i, dtype=float)
    p = x[:2] + (i @ R.T) * (h / focal)
    return p, ~map_model.inside(p[..., 0], p[..., 1])


def world_from_image(x, pixel, intr: CameraIntrinsics, map_model: MapModel):
    """World point(s) seen at (row, col) pixel index(es); returns (p, outside)."""
    return world_from_sensor(x, intr.sensor_coordinates(pixel), intr.focal, map_model)


def coord_jacobian(x, i, focal: float, map_model: MapModel) -> np.ndarray:
    """d p / d x (2 x 11) at metric sensor coordinate i."""
    x = np.asarray(x, dtype=float)
    i = np.asarray(i, dtype=float)
    h = camera_height(x, map_model)
    _, egrad = map_model.elevation_at(x[0], x[1])
    R, dR = rotation_and_derivative(x[YAW])
    Ri = R @ i / focal
    J = np.zeros((2, N_STATE))
    J[:, 0:2] = np.eye(2) - np.outer(Ri, egrad)
    J[:, 2] = Ri
    J[:, YAW] = dR @ i * h / focal
    return J


@dataclass(frozen=True)
class PreprocessConfig:
    """Image conditioning stages, applied in this order when enabled."""

    blur_sigma: float = 0.5
    normalize: bool = False
    equalize: bool = False
    match: bool = False
    bins: int = 256

    @property
    def any_stage(self) -> bool:
        return self.blur_sigma > 0 or self.normalize or self.equalize or self.match


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable sampled-Gaussian blur, kernel normalized to sum 1, radius round(4 sigma)."""
    if sigma <= 0:
        return img
    return ndimage.gaussian_filter(img, sigma=sigma, mode="nearest", truncate=4.0)


def _histogram_cdf(values: np.ndarray, bins: int):
    hist, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    cdf = np.cumsum(hist).astype(float)
    return cdf / cdf[-1]


def _bin_index(values: np.ndarray, bins: int) -> np.ndarray:
    return np.clip((np.clip(values, 0.0, 1.0) * bins).astype(int), 0, bins - 1)


def equalize_histogram(img: np.ndarray, bins: int = 256, mask=None) -> np.ndarray:
    sel = img if mask is None else img[mask]
    if sel.size == 0:
        return img
    cdf = _histogram_cdf(sel, bins)
    out = cdf[_bin_index(img, bins)]
    return out if mask is None else np.where(mask, out, img)


def match_histogram(img: np.ndarray, reference: np.ndarray, bins: int = 256, mask=None, ref_mask=None) -> np.ndarray:
    """Map intensities so their 256-bin CDF follows the reference's."""
    src = img if mask is None else img[mask]
    ref = reference if ref_mask is None else reference[ref_mask]
    if src.size == 0 or ref.size == 0:
        return img
    cdf_s = _histogram_cdf(src, bins)
    cdf_r = _histogram_cdf(ref, bins)
    centers = (np.arange(bins) + 0.5) / bins
    # smallest reference bin whose CDF reaches the source CDF
    target = centers[np.minimum(np.searchsorted(cdf_r, cdf_s - 1e-12, side="left"), bins - 1)]
    src_center = centers[_bin_index(img, bins)]
    out = img + (target[_bin_index(img, bins)] - src_center)
    return out if mask is None else np.where(mask, out, img)


def normalize_minmax(img: np.ndarray, mask=None) -> np.ndarray:
    sel = img if mask is None else img[mask]
    if sel.size == 0:
        return img
    lo, hi = float(sel.min()), float(sel.max())
    if hi <= lo:
        return img
    out = (img - lo) / (hi - lo)
    return out if mask is None else np.where(mask, out, img)


def preprocess(img: ImageField, cfg: PreprocessConfig, reference: ImageField | None = None) -> ImageField:
    """Blur, normalize, equalize, then (with a reference) histogram-match.

    Operates on single-channel images; the validity mask is carried through.
    """
    data = img.scalar.copy()
    mask = img.valid
    if cfg.blur_sigma > 0:
        data = gaussian_blur(data, cfg.blur_sigma)
    if cfg.normalize:
        data = normalize_minmax(data, mask)
    if cfg.equalize:
        data = equalize_histogram(data, cfg.bins, mask)
    if cfg.match and reference is not None:
        data = match_histogram(data, reference.scalar, cfg.bins, mask, reference.valid)
    return ImageField(img.grid, data, None if mask is None else mask.copy())


def _render_analytic(x, intr: CameraIntrinsics, map_model: MapModel):
    i1, i2 = intr.sensor_axes()
    I = np.stack(np.broadcast_arrays(i1[None, :], i2[:, None]), axis=-1)
    h = camera_height(x, map_model)
    _, egrad = map_model.elevation_at(x[0], x[1])
    R, dR = rotation_and_derivative(x[YAW])
    q = I @ R.T / intr.focal
    dq = I @ dR.T / intr.focal
    p = x[:2] + q * h
    val, grad, inside = map_model.query(p[..., 0], p[..., 1])
    gq = (grad * q).sum(axis=-1)
    G = np.empty(val.shape + (4,))
    G[..., 0] = grad[..., 0] - egrad[0] * gq
    G[..., 1] = grad[..., 1] - egrad[1] * gq
    G[..., 2] = gq
    G[..., 3] = h * (grad * dq).sum(axis=-1)
    G[~inside] = 0.0
    return val, inside, G


def render_and_jacobian(x, intr: CameraIntrinsics, map_model: MapModel, backend=None):
    """Expected image and Jacobian field at state x, before any preprocessing."""
    x = np.asarray(x, dtype=float)
    grid = intr.grid
    if map_model.mode == "analytic":
        val, inside, G = _render_analytic(x, intr, map_model)
    else:
        h = camera_height(x, map_model)
        _, egrad = map_model.elevation_at(x[0], x[1])
        i1, i2 = intr.sensor_axes()
        val, inside, G = kernels.render_jacobian(
            map_model.intensity, map_model.grad_x, map_model.grad_y,
            map_model.origin, map_model.pitch, i1, i2,
            x[0], x[1], h, x[YAW], intr.focal, egrad, backend=backend,
        )
        inside = inside.astype(bool)
    image = ImageField(grid, val, inside)
    jac = JacobianField(grid, G[:, :, None, :], n=N_STATE, state_index=JACOBIAN_COLUMNS, valid=inside)
    return image, jac


def render_expected(x, intr: CameraIntrinsics, map_model: MapModel) -> ImageField:
    return render_and_jacobian(x, intr, map_model)[0]


def measurement_jacobian(x, intr: CameraIntrinsics, map_model: MapModel) -> JacobianField:
    return render_and_jacobian(x, intr, map_model)[1]


@dataclass
class CameraMeasurementModel:
    """Measurement model for the filter: rendered map view plus conditioning.

    The predicted image and every Jacobian column receive the same blur, so
    the Jacobian stays the derivative of the conditioned prediction. Pixels
    whose blur footprint touches the off-map region are marked invalid.
    """

    intr: CameraIntrinsics
    map_model: MapModel
    preprocessing: PreprocessConfig = field(default_factory=PreprocessConfig)
    backend: str | None = None

    @property
    def grid(self) -> FieldGrid:
        return self.intr.grid

    def evaluate(self, x):
        image, jac = render_and_jacobian(x, self.intr, self.map_model, backend=self.backend)
        cfg = self.preprocessing
        if cfg.blur_sigma > 0:
            valid = image.valid
            if not valid.all():
                radius = int(4.0 * cfg.blur_sigma + 0.5)
                valid = ndimage.binary_erosion(valid, iterations=max(radius, 1), border_value=1)
            # one call over all columns: per-column slices are strided and much slower
            s = cfg.blur_sigma
            jac.values = ndimage.gaussian_filter(jac.values, (s, s, 0, 0), mode="nearest", truncate=4.0)
            jac.valid = valid
            image = ImageField(image.grid, image.data, valid)
        image = preprocess(image, PreprocessConfig(cfg.blur_sigma, cfg.normalize, cfg.equalize, False, cfg.bins))
        return image, jac

    def condition(self, measurement: ImageField, predicted: ImageField) -> ImageField:
        if not self.preprocessing.any_stage:
            return measurement
        return preprocess(measurement, self.preprocessing, reference=predicted)
