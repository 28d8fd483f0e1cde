"""Extended Kalman filtering with image-field measurements."""

from fieldekf.camera import CameraIntrinsics, CameraMeasurementModel, MapModel, PreprocessConfig
from fieldekf.drone import DroneState, ImuSample, NoiseDensities, build_input, build_Q, transition_matrix
from fieldekf.errors import (
    ConfigError,
    DatasetError,
    DivergenceError,
    FieldEKFError,
    GridMismatchError,
    InvalidKernelError,
    SingularSpectrumError,
    TerrainError,
)
from fieldekf.fields import FieldGrid, GainField, ImageField, JacobianField
from fieldekf.filter import FilterState, LinearFieldModel, ProcessModel, step
from fieldekf.kernels import BACKEND
from fieldekf.spectral import StationaryKernel, gaussian_kernel, sample_noise_field, validate_assumptions

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CameraIntrinsics",
    "CameraMeasurementModel",
    "ConfigError",
    "DatasetError",
    "DivergenceError",
    "DroneState",
    "FieldEKFError",
    "FieldGrid",
    "FilterState",
    "GainField",
    "GridMismatchError",
    "ImageField",
    "ImuSample",
    "InvalidKernelError",
    "JacobianField",
    "LinearFieldModel",
    "MapModel",
    "NoiseDensities",
    "PreprocessConfig",
    "ProcessModel",
    "SingularSpectrumError",
    "StationaryKernel",
    "TerrainError",
    "build_Q",
    "build_input",
    "gaussian_kernel",
    "sample_noise_field",
    "step",
    "transition_matrix",
    "validate_assumptions",
]
