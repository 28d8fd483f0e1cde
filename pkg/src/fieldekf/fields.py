"""Sampled fields over a regular 2-D grid.

Every field stores its samples in a contiguous array whose leading two axes
are (rows, cols). Integrals over the domain are midpoint Riemann sums, i.e.
the sum over samples times the grid cell area.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fieldekf.errors import GridMismatchError


@dataclass(frozen=True)
class FieldGrid:
    """Regular sampling grid.

    Parameters
    ----------
    dims : (rows, cols)
    pitch : (row spacing, col spacing), physical units per sample
    origin : physical coordinate of sample (0, 0)
    """

    dims: tuple[int, int]
    pitch: tuple[float, float] = (1.0, 1.0)
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        pitch = tuple(float(p) for p in self.pitch)
        if len(dims) != 2 or min(dims) < 1:
            raise ValueError(f"grid dims must be two positive integers, got {self.dims}")
        if len(pitch) != 2 or not all(p > 0 for p in pitch):
            raise ValueError(f"grid pitches must be positive, got {self.pitch}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "pitch", pitch)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def cell_area(self) -> float:
        return self.pitch[0] * self.pitch[1]

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1]

    def frequency_cell(self) -> float:
        """Volume of one cell of the DFT frequency grid."""
        return 1.0 / (self.dims[0] * self.pitch[0] * self.dims[1] * self.pitch[1])

    def same_as(self, other: "FieldGrid") -> bool:
        return self.dims == other.dims and np.allclose(self.pitch, other.pitch, rtol=1e-12, atol=0)

    def check_same(self, other: "FieldGrid", what: str = "fields") -> None:
        if not self.same_as(other):
            raise GridMismatchError(f"{what} live on different grids: {self} vs {other}")


def _as_channels(data: np.ndarray, dims) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3 or data.shape[:2] != tuple(dims):
        raise GridMismatchError(f"field samples of shape {data.shape} do not match grid {dims}")
    return np.ascontiguousarray(data)


@dataclass
class ImageField:
    """An m-channel field: measurements, predictions, innovations, noise.

    ``data`` has shape (rows, cols, m). ``valid`` marks samples that carry
    information; ``None`` means all samples are valid.
    """

    grid: FieldGrid
    data: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.data = _as_channels(self.data, self.grid.dims)
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.grid.dims:
                raise GridMismatchError("validity mask does not match grid")

    @classmethod
    def zeros(cls, grid: FieldGrid, channels: int = 1) -> "ImageField":
        return cls(grid, np.zeros(grid.dims + (channels,)))

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def scalar(self) -> np.ndarray:
        """The (rows, cols) view of a single-channel field."""
        if self.channels != 1:
            raise ValueError("field has more than one channel")
        return self.data[:, :, 0]

    def valid_mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.grid.dims, dtype=bool)
        return self.valid

    def with_data(self, data) -> "ImageField":
        return ImageField(self.grid, data, None if self.valid is None else self.valid.copy())


@dataclass
class JacobianField:
    """Per-sample m x n measurement Jacobians.

    Only the state columns listed in ``state_index`` are stored; the others
    are structurally zero. ``values`` has shape (rows, cols, m, len(state_index)).
    """

    grid: FieldGrid
    values: np.ndarray
    n: int
    state_index: np.ndarray = None
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 3:
            values = values[:, :, None, :]
        if values.ndim != 4 or values.shape[:2] != self.grid.dims:
            raise GridMismatchError(f"Jacobian samples of shape {values.shape} do not match grid {self.grid.dims}")
        if self.state_index is None:
            self.state_index = np.arange(values.shape[3])
        self.state_index = np.asarray(self.state_index, dtype=np.intp)
        if self.state_index.shape != (values.shape[3],):
            raise ValueError("state_index length must match the stored Jacobian columns")
        if self.state_index.size and (self.state_index.min() < 0 or self.state_index.max() >= self.n):
            raise ValueError("state_index out of range")
        self.values = np.ascontiguousarray(values)
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def dense(self) -> np.ndarray:
        """Full (rows, cols, m, n) array."""
        out = np.zeros(self.values.shape[:3] + (self.n,))
        out[..., self.state_index] = self.values
        return out

    def valid_mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.grid.dims, dtype=bool)
        return self.valid


@dataclass
class GainField:
    """Per-sample n x m gains kappa(i) = P phi(i).

    The gain is kept factored as the posterior covariance times the gain basis
    so the update integral costs one n x n product; ``values`` materializes it.
    """

    P: np.ndarray
    phi: np.ndarray  # (rows, cols, n, m)
    grid: FieldGrid
    _values: np.ndarray | None = field(default=None, repr=False)

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            self._values = np.einsum("ab,rcbm->rcam", self.P, self.phi, optimize=True)
        return self._values

    def l1_norm(self) -> float:
        return float(np.abs(self.values).sum() * self.grid.cell_area)

    def l2_norm(self) -> float:
        return float(np.sqrt((self.values**2).sum() * self.grid.cell_area))
