"""Stationary random-field noise: kernels, spectra and noise synthesis.

Transform convention
--------------------
The forward transform of sampled data is the raw DFT times the cell area A,
the inverse is the raw inverse DFT times N times the frequency-cell volume
(which equals the raw ``ifft2`` divided by A). With this pairing the discrete
pipeline approximates the continuous transforms

    F{f}(w) = int f(i) exp(-2 pi j w.i) di,   F^-1{f}(i) = int f(w) exp(2 pi j i.w) dw

and a continuous white covariance ``Sigma delta`` maps to the flat spectrum
``Sigma``. All transforms are circular over the sampling grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fieldekf.errors import InvalidKernelError, SingularSpectrumError
from fieldekf.fields import FieldGrid, ImageField

SPECTRUM_FLOOR = 1e-8
REGULARIZATION_WARN_FRACTION = 0.10


class RegularizationWarning(RuntimeWarning):
    """Too many frequencies needed the spectral floor."""


@dataclass(frozen=True)
class StationaryKernel:
    """Covariance function R(tau) of a wide-sense stationary field.

    Either ideal white noise (``sigma`` set, ``values`` None) or samples of
    R on a centered lag grid: ``values[a + da, b + db]`` holds R at lag
    (da, db) * pitch, shape (2a+1, 2b+1, m, m).
    """

    sigma: np.ndarray | None = None
    values: np.ndarray | None = None
    pitch: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if (self.sigma is None) == (self.values is None):
            raise InvalidKernelError("give exactly one of sigma (white) or values (sampled)")
        if self.sigma is not None:
            sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
            if sigma.shape[0] != sigma.shape[1] or not np.allclose(sigma, sigma.T, atol=1e-12):
                raise InvalidKernelError("white-noise covariance must be square and symmetric")
            object.__setattr__(self, "sigma", sigma)
            return
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None, None]
        if values.ndim != 4 or values.shape[2] != values.shape[3]:
            raise InvalidKernelError(f"kernel samples must be (rows, cols, m, m), got {values.shape}")
        if values.shape[0] % 2 == 0 or values.shape[1] % 2 == 0:
            raise InvalidKernelError("kernel lag grid must have odd extent (centered at lag 0)")
        # R(tau) = R(-tau)^T
        flipped = values[::-1, ::-1].transpose(0, 1, 3, 2)
        if not np.allclose(values, flipped, rtol=0, atol=1e-12 * max(1.0, np.abs(values).max())):
            raise InvalidKernelError("kernel violates R(tau) = R(-tau)^T")
        center = values[values.shape[0] // 2, values.shape[1] // 2]
        if np.linalg.eigvalsh(0.5 * (center + center.T)).min() < -1e-12:
            raise InvalidKernelError("R(0) is not positive semidefinite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "pitch", tuple(float(p) for p in self.pitch))

    @classmethod
    def white(cls, sigma) -> "StationaryKernel":
        return cls(sigma=sigma)

    @property
    def is_white(self) -> bool:
        return self.sigma is not None

    @property
    def channels(self) -> int:
        return self.sigma.shape[0] if self.is_white else self.values.shape[2]

    @property
    def half_width(self) -> tuple[int, int]:
        if self.is_white:
            return (0, 0)
        return (self.values.shape[0] // 2, self.values.shape[1] // 2)

    def embed(self, grid: FieldGrid) -> np.ndarray:
        """Place the lag samples on the grid with circular wrap, lag 0 at [0, 0]."""
        if self.is_white:
            raise InvalidKernelError("white kernels have no sampled form")
        if not np.allclose(self.pitch, grid.pitch, rtol=1e-12):
            raise InvalidKernelError(f"kernel pitch {self.pitch} differs from grid pitch {grid.pitch}")
        a, b = self.half_width
        rows, cols = grid.dims
        if 2 * a + 1 > rows or 2 * b + 1 > cols:
            raise InvalidKernelError(
                f"kernel support (half-width {a}, {b}) exceeds half the grid extent {grid.dims}"
            )
        m = self.channels
        out = np.zeros((rows, cols, m, m))
        ri = np.arange(-a, a + 1) % rows
        ci = np.arange(-b, b + 1) % cols
        out[np.ix_(ri, ci)] = self.values
        return out


def gaussian_kernel(length_scale: float, variance: float = 1.0, radius: int | None = None,
                    pitch=(1.0, 1.0)) -> StationaryKernel:
    """Scalar kernel R(tau) = variance * exp(-|tau|^2 / (2 length_scale^2))."""
    if radius is None:
        radius = int(np.ceil(6.0 * length_scale / min(pitch)))
    dy = np.arange(-radius, radius + 1) * pitch[0]
    dx = np.arange(-radius, radius + 1) * pitch[1]
    tau2 = dy[:, None] ** 2 + dx[None, :] ** 2
    return StationaryKernel(values=variance * np.exp(-tau2 / (2.0 * length_scale**2)), pitch=pitch)


@dataclass
class Spectrum:
    """Sampled spectrum R_bar(w) on the DFT frequency grid.

    ``values`` has shape (rows, cols, m, m), or (1, 1, m, m) for a flat
    spectrum that broadcasts over all frequencies.
    """

    values: np.ndarray
    floor: float = 0.0
    regularized_fraction: float = 0.0
    regularized_mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def flat(self) -> bool:
        return self.values.shape[:2] == (1, 1)

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def hermitian_error(self) -> float:
        return float(np.abs(self.values - np.conj(self.values.swapaxes(-1, -2))).max())

    def min_singular_value(self) -> float:
        return float(np.abs(np.linalg.eigvalsh(self.values)).min())

    def max_norm(self) -> float:
        return float(np.abs(np.linalg.eigvalsh(self.values)).max())


def forward_transform(samples: np.ndarray, grid: FieldGrid) -> np.ndarray:
    """Area-scaled DFT over the two leading axes."""
    return np.fft.fft2(samples, axes=(0, 1)) * grid.cell_area


def inverse_transform(spectrum: np.ndarray, grid: FieldGrid) -> np.ndarray:
    """Inverse of ``forward_transform``: raw inverse DFT times N times the frequency cell."""
    return np.fft.ifft2(spectrum, axes=(0, 1)) * (grid.size * grid.frequency_cell())


def spectrum_of(kernel: StationaryKernel, grid: FieldGrid) -> Spectrum:
    """Sampled spectrum of ``kernel`` on the grid's frequency lattice."""
    if kernel.is_white:
        return Spectrum(kernel.sigma.astype(complex)[None, None].copy())
    values = forward_transform(kernel.embed(grid), grid)
    values = 0.5 * (values + np.conj(values.swapaxes(-1, -2)))
    return Spectrum(values)


def invert_spectrum(spec: Spectrum, floor_ratio: float = SPECTRUM_FLOOR) -> Spectrum:
    """Per-frequency inverse with eigenvalues clamped at the spectral floor.

    The floor is ``floor_ratio`` times the largest spectral norm. Frequencies
    whose smallest eigenvalue falls below it are the regularized ones; the
    others are inverted exactly.
    """
    values = 0.5 * (spec.values + np.conj(spec.values.swapaxes(-1, -2)))
    if not np.all(np.isfinite(values)):
        raise SingularSpectrumError("spectrum contains non-finite values")
    lam, vecs = np.linalg.eigh(values)
    scale = np.abs(lam).max()
    if scale == 0.0:
        raise SingularSpectrumError("spectrum is identically zero", worst_frequency=(0, 0))
    eps = floor_ratio * scale
    low = lam < eps
    active = low.any(axis=-1)
    lam_c = np.where(low, eps, lam)
    inv = np.einsum("...ij,...j,...kj->...ik", vecs, 1.0 / lam_c, np.conj(vecs))
    fraction = float(active.mean())
    if fraction > REGULARIZATION_WARN_FRACTION:
        warnings.warn(
            f"spectral floor active at {100 * fraction:.1f}% of frequencies",
            RegularizationWarning,
            stacklevel=2,
        )
    return Spectrum(inv, floor=eps, regularized_fraction=fraction, regularized_mask=active)


def apply_inverse_spectrum(G: np.ndarray, inverse: Spectrum, grid: FieldGrid) -> np.ndarray:
    """phi = F^-1{ G_bar^T R_bar^-1 } for a Jacobian array G of shape (rows, cols, m, k).

    Returns the real (rows, cols, k, m) gain-basis samples.
    """
    G_bar = forward_transform(G, grid)
    prod = np.einsum("rcmk,rcml->rckl", G_bar, np.broadcast_to(inverse.values, G_bar.shape[:2] + inverse.values.shape[2:]))
    phi = inverse_transform(prod, grid)
    return np.ascontiguousarray(phi.real)


def _psd_sqrt(mats: np.ndarray, what: str) -> np.ndarray:
    lam, vecs = np.linalg.eigh(mats)
    tol = 1e-10 * max(1.0, float(np.abs(lam).max()))
    if lam.min() < -tol:
        raise InvalidKernelError(f"{what} has a negative eigenvalue {lam.min():.3g}")
    lam = np.clip(lam, 0.0, None)
    return np.einsum("...ij,...j,...kj->...ik", vecs, np.sqrt(lam), np.conj(vecs))


def sample_noise_field(kernel: StationaryKernel, grid: FieldGrid, seed: int) -> ImageField:
    """Zero-mean Gaussian field with the kernel's stationary covariance.

    White kernels give i.i.d. samples with covariance Sigma / A. Sampled
    kernels are synthesized by filtering white noise with the square root of
    the spectrum in the frequency domain; real-input transforms keep the
    output exactly real.
    """
    rng = np.random.default_rng(np.uint64(seed))
    m = kernel.channels
    xi = rng.standard_normal(grid.dims + (m,))
    if kernel.is_white:
        root = _psd_sqrt(kernel.sigma / grid.cell_area, "white covariance").real
        return ImageField(grid, xi @ root.T)
    raw = np.fft.fft2(kernel.embed(grid), axes=(0, 1))
    raw = 0.5 * (raw + np.conj(raw.swapaxes(-1, -2)))
    root = _psd_sqrt(raw, "kernel spectrum")
    half = grid.dims[1] // 2 + 1
    xi_hat = np.fft.rfft2(xi, axes=(0, 1))
    y_hat = np.einsum("rcij,rcj->rci", root[:, :half], xi_hat)
    noise = np.fft.irfft2(y_hat, s=grid.dims, axes=(0, 1))
    return ImageField(grid, noise)


# -- kernel files -----------------------------------------------------------

_KERNEL_MAGIC = "FIELDKERNEL"


def write_kernel(path, kernel: StationaryKernel) -> None:
    """Text header then little-endian float64 samples (row-major, lag grid then m x m)."""
    if kernel.is_white:
        raise InvalidKernelError("white kernels are configured by Sigma, not written as files")
    v = kernel.values
    header = (
        f"{_KERNEL_MAGIC}\n"
        f"dims {v.shape[0]} {v.shape[1]}\n"
        f"pitch {kernel.pitch[0]!r} {kernel.pitch[1]!r}\n"
        f"channels {v.shape[2]}\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_kernel(path) -> StationaryKernel:
    path = Path(path)
    raw = path.read_bytes()
    marker = b"end_header\n"
    cut = raw.find(marker)
    if cut < 0:
        raise InvalidKernelError(f"{path}: missing end_header line")
    fields = {}
    lines = raw[:cut].decode("ascii").splitlines()
    if not lines or lines[0].strip() != _KERNEL_MAGIC:
        raise InvalidKernelError(f"{path}: not a kernel file")
    for line in lines[1:]:
        key, *vals = line.split()
        fields[key] = vals
    try:
        rows, cols = (int(x) for x in fields["dims"])
        pitch = tuple(float(x) for x in fields["pitch"])
        m = int(fields["channels"][0])
    except (KeyError, ValueError) as exc:
        raise InvalidKernelError(f"{path}: bad header ({exc})") from None
    data = np.frombuffer(raw[cut + len(marker):], dtype="<f8")
    if data.size != rows * cols * m * m:
        raise InvalidKernelError(f"{path}: expected {rows * cols * m * m} samples, found {data.size}")
    return StationaryKernel(values=data.reshape(rows, cols, m, m).astype(float), pitch=pitch)


# -- assumption checks ------------------------------------------------------

@dataclass
class AssumptionCheck:
    name: str
    status: str  # "pass", "warn" or "fail"
    values: dict
    detail: str = ""

    def line(self) -> str:
        vals = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.values.items())
        tail = f" ({self.detail})" if self.detail else ""
        return f"{self.name}: {self.status.upper()} {vals}{tail}"


@dataclass
class AssumptionReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.status == "pass" for c in self.checks)

    def status(self, index: int) -> str:
        return self.checks[index - 1].status

    def format(self) -> str:
        return "\n".join(c.line() for c in self.checks) + "\n"


def _norm_check(name, arr, area, norms, finite_detail=""):
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0][:2])
        return AssumptionCheck(name, "fail", {"nonfinite": int(bad.sum())},
                               f"non-finite sample at pixel {idx}{finite_detail}")
    vals = {}
    if "L1" in norms:
        vals["L1"] = float(np.abs(arr).sum() * area)
    if "L2" in norms:
        vals["L2"] = float(np.sqrt((arr**2).sum() * area))
    if "Linf" in norms:
        vals["Linf"] = float(np.abs(arr).max()) if arr.size else 0.0
    return AssumptionCheck(name, "pass", vals)


def validate_assumptions(G, kernel: StationaryKernel, grid: FieldGrid, P=None) -> AssumptionReport:
    """Discrete versions of the integrability and invertibility conditions.

    ``G`` is a JacobianField or a (rows, cols, m, k) array; ``P`` is the
    covariance used to form gains (identity when omitted). Nothing raises:
    every check reports pass, warn or fail with the computed values.
    """
    values = getattr(G, "values", G)
    values = np.asarray(values, dtype=float)
    if values.ndim == 3:
        values = values[:, :, None, :]
    area = grid.cell_area
    checks = [_norm_check("A1 Jacobian integrable and bounded", values, area, ("L1", "Linf"))]

    if kernel.is_white:
        sig = kernel.sigma
        if np.all(np.isfinite(sig)):
            checks.append(AssumptionCheck("A2 noise kernel integrable and bounded", "pass",
                                          {"Sigma_norm": float(np.linalg.norm(sig, 2))}, "ideal white"))
        else:
            checks.append(AssumptionCheck("A2 noise kernel integrable and bounded", "fail", {}, "non-finite Sigma"))
    else:
        checks.append(_norm_check("A2 noise kernel integrable and bounded", kernel.values,
                                  float(np.prod(kernel.pitch)), ("L1", "Linf")))

    spec = None
    inverse = None
    try:
        spec = spectrum_of(kernel, grid)
        raw_min = spec.min_singular_value()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RegularizationWarning)
            inverse = invert_spectrum(spec)
        vals = {"min_singular_value": raw_min, "floor": inverse.floor,
                "regularized_fraction": inverse.regularized_fraction}
        if inverse.regularized_fraction > 0:
            checks.append(AssumptionCheck("A4 spectrum invertible", "warn", vals,
                                          "spectral floor active at some frequencies"))
        else:
            checks.append(AssumptionCheck("A4 spectrum invertible", "pass", vals))
    except (SingularSpectrumError, InvalidKernelError) as exc:
        checks.append(AssumptionCheck("A4 spectrum invertible", "fail", {}, str(exc)))

    phi = None
    if inverse is not None and checks[0].status != "fail":
        phi = apply_inverse_spectrum(values, inverse, grid)
    if phi is None:
        a3 = AssumptionCheck("A3 gain integrable", "fail", {}, "gain basis unavailable")
        a5 = AssumptionCheck("A5 gain basis has an integrable inverse transform", "fail", {}, "gain basis unavailable")
    else:
        k = values.shape[3]
        Pm = np.eye(k) if P is None else np.asarray(P, dtype=float)
        if Pm.shape[0] != k:
            idx = getattr(G, "state_index", np.arange(Pm.shape[0]))
            Pm = Pm[np.ix_(idx, idx)]
        kappa = np.einsum("ab,rcbm->rcam", Pm, phi)
        a3 = _norm_check("A3 gain integrable", kappa, area, ("L1", "L2"))
        a5 = _norm_check("A5 gain basis has an integrable inverse transform", phi, area, ("L1", "L2"))
    checks.insert(2, a3)
    checks.append(a5)
    return AssumptionReport(checks)
