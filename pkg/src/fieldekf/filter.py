"""Extended Kalman filter for finite-dimensional states observed through fields.

One recursion of :func:`step`::

    x_prior = f(x, u)
    phi(i)  = F^-1{ G_bar^T R_bar^-1 }          (phi = G^T Sigma^-1 for white noise)
    S       = int phi(i) G(i) di
    P_prior = F P F^T + Q
    P       = P_prior (I + S P_prior)^-1
    kappa   = P phi
    x       = x_prior + int kappa(i) (zeta(i) - g(x_prior, i)) di

Integrals are midpoint sums over the measurement grid times the cell area.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from fieldekf import kernels
from fieldekf.errors import DivergenceError, GridMismatchError, SingularSpectrumError
from fieldekf.fields import FieldGrid, GainField, ImageField, JacobianField
from fieldekf.spectral import (
    SPECTRUM_FLOOR,
    StationaryKernel,
    apply_inverse_spectrum,
    invert_spectrum,
    spectrum_of,
)

CONDITION_LIMIT = 1e12
Q_FLOOR_RATIO = 1e-12


class IllConditionedWarning(RuntimeWarning):
    """(I + P S) was close to singular during the covariance update."""


@dataclass
class FilterState:
    """Estimate, covariance and time index, plus diagnostics from the last step."""

    x_hat: np.ndarray
    P: np.ndarray
    k: int = 0
    x_prior: np.ndarray | None = None
    P_prior: np.ndarray | None = None
    S: np.ndarray | None = None
    ill_conditioned: bool = False
    invalid_pixels: int = 0

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=float).copy()
        self.P = symmetrize(np.asarray(self.P, dtype=float))
        n = self.x_hat.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"covariance shape {self.P.shape} does not match state length {n}")

    @property
    def n(self) -> int:
        return self.x_hat.shape[0]


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def floor_covariance(Q: np.ndarray, dt: float = 0.0) -> np.ndarray:
    """Lift structural zeros on the diagonal so Q is positive definite.

    Adds 1e-12 * max(max diag Q, dt) to every diagonal entry when some
    diagonal entry is zero; a Q that is already definite is returned as is.
    """
    Q = symmetrize(np.asarray(Q, dtype=float))
    d = np.diag(Q)
    if np.all(d > 0) and np.linalg.eigvalsh(Q).min() > 0:
        return Q
    eps = Q_FLOOR_RATIO * max(float(d.max(initial=0.0)), float(dt))
    if eps <= 0:
        eps = Q_FLOOR_RATIO
    return Q + eps * np.eye(Q.shape[0])


@dataclass
class ProcessModel:
    """State transition f(x, u), its Jacobian F(x) and process covariance Q."""

    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    F: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray
    dt: float = 0.0

    def __post_init__(self):
        self.Q = floor_covariance(self.Q, self.dt)

    @classmethod
    def linear(cls, A, Q, dt: float = 0.0) -> "ProcessModel":
        A = np.asarray(A, dtype=float)
        return cls(f=lambda x, u: A @ x + u, F=lambda x: A, Q=Q, dt=dt)


class MeasurementModel(Protocol):
    """g(x, grid) and its Jacobian G(x, grid) over a sampling grid.

    ``evaluate`` returns both at once so models can share work between them.
    ``condition`` may adjust the raw measurement against the prediction
    (photometric alignment); the identity is a valid implementation.
    """

    grid: FieldGrid

    def evaluate(self, x: np.ndarray) -> tuple[ImageField, JacobianField]: ...

    def condition(self, measurement: ImageField, predicted: ImageField) -> ImageField: ...


@dataclass
class LinearFieldModel:
    """g(x, i) = G(i) x + y(i) with fixed Jacobian and offset fields."""

    grid: FieldGrid
    G: np.ndarray  # (rows, cols, m, n)
    y: np.ndarray  # (rows, cols, m)

    def evaluate(self, x):
        G = np.asarray(self.G, dtype=float)
        if G.ndim == 3:
            G = G[:, :, None, :]
        pred = np.einsum("rcmn,n->rcm", G, x) + np.asarray(self.y, dtype=float).reshape(G.shape[:3])
        return ImageField(self.grid, pred), JacobianField(self.grid, G, n=G.shape[3])

    def condition(self, measurement, predicted):
        return measurement


def _check_finite(vec: np.ndarray, what: str, k=None) -> None:
    bad = ~np.isfinite(vec)
    if bad.any():
        idx = int(np.flatnonzero(bad.ravel())[0])
        raise DivergenceError(f"non-finite {what} entry {idx}", k=k)


def predict_state(state: FilterState, model: ProcessModel, u=None) -> np.ndarray:
    u = np.zeros(state.n) if u is None else np.asarray(u, dtype=float)
    x = np.asarray(model.f(state.x_hat, u), dtype=float)
    _check_finite(x, "predicted state", state.k)
    return x


def predict_covariance(state: FilterState, model: ProcessModel) -> np.ndarray:
    F = np.asarray(model.F(state.x_hat), dtype=float)
    return symmetrize(F @ state.P @ F.T + model.Q)


def _sigma_inverse(sigma) -> np.ndarray:
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise SingularSpectrumError("measurement covariance Sigma is singular or indefinite") from None
    Linv = np.linalg.solve(L, np.eye(L.shape[0]))
    return Linv.T @ Linv


def _scatter(block: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, n))
    out[np.ix_(index, index)] = block
    return out


def gram_matrix_white(G: JacobianField, sigma, grid: FieldGrid | None = None, workers: int = 1) -> np.ndarray:
    """A * sum_i G(i)^T Sigma^-1 G(i) over valid samples."""
    grid = grid or G.grid
    grid.check_same(G.grid, "Jacobian and grid")
    Sinv = _sigma_inverse(sigma)
    block = kernels.gram_white(G.values, Sinv, G.valid, grid.cell_area, workers=workers)
    return symmetrize(_scatter(block, G.state_index, G.n))


@dataclass
class GainBasis:
    """phi samples (rows, cols, k, m) for the stored Jacobian columns.

    For white noise ``phi`` is not materialized: it equals G^T Sigma^-1
    pointwise and ``sigma_inv`` carries Sigma^-1 instead.
    """

    grid: FieldGrid
    n: int
    state_index: np.ndarray
    phi: np.ndarray | None = None
    G: np.ndarray | None = None
    sigma_inv: np.ndarray | None = None

    def dense(self) -> np.ndarray:
        """Full (rows, cols, n, m) samples."""
        compact = self.compact()
        out = np.zeros(compact.shape[:2] + (self.n, compact.shape[3]))
        out[:, :, self.state_index, :] = compact
        return out

    def compact(self) -> np.ndarray:
        if self.phi is not None:
            return self.phi
        return np.einsum("rcmk,ml->rckl", self.G, self.sigma_inv)


def gain_basis_white(G: JacobianField, sigma) -> GainBasis:
    """phi(i) = G(i)^T Sigma^-1: the flat-spectrum case needs no transform."""
    return GainBasis(G.grid, G.n, G.state_index, G=G.values, sigma_inv=_sigma_inverse(sigma))


def gain_basis_spectral(G: JacobianField, kernel: StationaryKernel, grid: FieldGrid | None = None,
                        floor_ratio: float = SPECTRUM_FLOOR) -> GainBasis:
    """phi = F^-1{ G_bar^T R_bar^-1 } through the discrete transforms."""
    grid = grid or G.grid
    grid.check_same(G.grid, "Jacobian and grid")
    spec = spectrum_of(kernel, grid)
    lam = np.linalg.eigvalsh(spec.values)
    scale = float(np.abs(lam).max()) if lam.size else 0.0
    worst = np.unravel_index(int(np.argmin(lam.min(axis=-1))), lam.shape[:2])
    if scale == 0.0 or lam.min() < -floor_ratio * scale:
        raise SingularSpectrumError(
            f"noise spectrum is singular or indefinite (min eigenvalue {lam.min():.3g})",
            worst_frequency=tuple(int(w) for w in worst),
        )
    inverse = invert_spectrum(spec, floor_ratio)
    values = np.where(G.valid_mask()[:, :, None, None], G.values, 0.0)
    phi = apply_inverse_spectrum(values, inverse, grid)
    return GainBasis(grid, G.n, G.state_index, phi=phi)


def gram_matrix(basis: GainBasis, G: JacobianField, grid: FieldGrid | None = None, workers: int = 1) -> np.ndarray:
    """A * sum_i phi(i) G(i)."""
    grid = grid or G.grid
    basis.grid.check_same(G.grid, "gain basis and Jacobian")
    grid.check_same(G.grid, "Jacobian and grid")
    if not np.array_equal(basis.state_index, G.state_index):
        raise GridMismatchError("gain basis and Jacobian store different state columns")
    if basis.phi is None:
        block = kernels.gram_white(G.values, basis.sigma_inv, G.valid, grid.cell_area, workers=workers)
    else:
        block = kernels.gram_general(basis.phi, G.values, G.valid, grid.cell_area, workers=workers)
    return _scatter(block, G.state_index, G.n)


def posterior_covariance(P_prior: np.ndarray, S: np.ndarray, state: FilterState | None = None) -> np.ndarray:
    """P_prior (I + S P_prior)^-1, by a linear solve, symmetrized.

    Uses the identity P (I + S P)^-1 = (I + P S)^-1 P and solves
    (I + P S) X = P. A condition number above 1e12 sets
    ``state.ill_conditioned`` and emits a warning; the result is still returned.
    """
    n = P_prior.shape[0]
    M = np.eye(n) + P_prior @ S
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        if state is not None:
            state.ill_conditioned = True
        warnings.warn(f"I + P S is ill-conditioned (cond={cond:.3g})", IllConditionedWarning, stacklevel=2)
    return symmetrize(np.linalg.solve(M, P_prior))


def innovation(measurement: ImageField, predicted: ImageField) -> tuple[ImageField, int]:
    """zeta - g with invalid samples zeroed; returns (field, invalid count)."""
    measurement.grid.check_same(predicted.grid, "measurement and prediction")
    if measurement.channels != predicted.channels:
        raise GridMismatchError("measurement and prediction have different channel counts")
    valid = measurement.valid_mask() & predicted.valid_mask()
    diff = np.where(valid[:, :, None], measurement.data - predicted.data, 0.0)
    return ImageField(predicted.grid, diff, valid), int((~valid).sum())


def gain_field(P: np.ndarray, basis: GainBasis) -> GainField:
    return GainField(P, basis.dense(), basis.grid)


def update_state(x_prior: np.ndarray, P: np.ndarray, basis: GainBasis, innov: ImageField,
                 workers: int = 1, k=None) -> np.ndarray:
    """x_prior + A * sum_i kappa(i) z(i) with kappa = P phi.

    The sum is taken as P (A * sum_i phi(i) z(i)), which is the same
    integral with the constant P pulled out.
    """
    basis.grid.check_same(innov.grid, "gain and innovation")
    A = innov.grid.cell_area
    if basis.phi is None:
        b = kernels.project_white(basis.G, basis.sigma_inv, innov.data, innov.valid, A, workers=workers)
    else:
        b = kernels.project_general(basis.phi, innov.data, innov.valid, A, workers=workers)
    full = np.zeros(basis.n)
    full[basis.state_index] = b
    x = x_prior + P @ full
    _check_finite(x, "updated state", k)
    return x


def update_with_gain(x_prior: np.ndarray, gain: GainField, innov: ImageField, k=None) -> np.ndarray:
    """Update from a materialized gain field: x_prior + A * sum_i kappa(i) z(i)."""
    gain.grid.check_same(innov.grid, "gain and innovation")
    valid = innov.valid_mask()
    z = np.where(valid[:, :, None], innov.data, 0.0)
    x = x_prior + np.einsum("rcnm,rcm->n", gain.values, z) * innov.grid.cell_area
    _check_finite(x, "updated state", k)
    return x


def step(state: FilterState, process: ProcessModel, meas_model, noise, measurement: ImageField,
         u=None, workers: int = 1) -> FilterState:
    """One filter recursion; returns a new state carrying the a priori quantities.

    ``noise`` is a StationaryKernel. White kernels take the direct
    G^T Sigma^-1 path, sampled kernels the transform path.
    """
    k = state.k + 1
    try:
        x_prior = predict_state(state, process, u)
        predicted, G = meas_model.evaluate(x_prior)
        if noise.is_white:
            basis = gain_basis_white(G, noise.sigma)
        else:
            basis = gain_basis_spectral(G, noise, G.grid)
        S = symmetrize(gram_matrix(basis, G, workers=workers))
        P_prior = predict_covariance(state, process)
        new = FilterState(x_prior, P_prior, k=k)
        P = posterior_covariance(P_prior, S, new)
        _check_finite(P.ravel(), "covariance", k)
        measured = meas_model.condition(measurement, predicted)
        innov, invalid = innovation(measured, predicted)
        if G.valid is not None:
            innov.valid = innov.valid & G.valid
        x = update_state(x_prior, P, basis, innov, workers=workers, k=k)
    except DivergenceError as exc:
        if exc.k is None:
            exc.k = k
        raise
    return replace(new, x_hat=x, P=P, x_prior=x_prior, P_prior=P_prior, S=S, invalid_pixels=invalid)
