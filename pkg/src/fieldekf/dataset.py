"""The on-disk dataset layout shared by the simulator and the harness.

::

    <dir>/config.txt        key = value parameters (seeds, intrinsics, image range, ...)
    <dir>/map.pgm           16-bit map intensities, with map.txt metadata sidecar
    <dir>/images/%06d.pgm   16-bit frames, one per truth row
    <dir>/imu.csv           t,ax,ay,az,gz[,qw,qx,qy,qz]
    <dir>/truth.csv         t,x,y,z,yaw[,vx,vy,vz,ax,ay,az,r]

Frame intensities are stored through the affine range ``image_range`` in
config.txt so that noisy values outside [0, 1] survive quantization.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from fieldekf import io
from fieldekf.camera import CameraIntrinsics, MapModel
from fieldekf.drone import N_STATE, wrap_angle
from fieldekf.errors import DatasetError
from fieldekf.fields import ImageField

IMU_COLUMNS = ["t", "ax", "ay", "az", "gz"]
QUAT_COLUMNS = ["qw", "qx", "qy", "qz"]
TRUTH_COLUMNS = ["t", "x", "y", "z", "yaw"]
TRUTH_EXTRA = ["vx", "vy", "vz", "ax", "ay", "az", "r"]


class DatasetWarning(UserWarning):
    pass


@dataclass
class Dataset:
    """Frames, IMU stream, ground truth, map and camera for one flight."""

    config: dict
    map_model: MapModel
    intrinsics: CameraIntrinsics
    times: np.ndarray
    truth: np.ndarray  # (N, 11)
    imu: dict
    frames: list | None = None
    loader: Callable[[int], ImageField] | None = None
    path: Path | None = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.windows = imu_windows(self.imu["t"], self.times)

    def __len__(self) -> int:
        return len(self.times)

    def image(self, k: int) -> ImageField:
        if self.frames is not None:
            return self.frames[k]
        return self.loader(k)

    def imu_window(self, k: int) -> dict:
        lo, hi = self.windows[k]
        out = {"t": self.imu["t"][lo:hi], "accel": self.imu["accel"][lo:hi], "gyro_z": self.imu["gyro_z"][lo:hi]}
        if "quat" in self.imu:
            out["quat"] = self.imu["quat"][lo:hi]
        return out

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.times))) if len(self.times) > 1 else float(self.config.get("dt", 1 / 15))


def imu_windows(imu_t: np.ndarray, frame_t: np.ndarray) -> np.ndarray:
    """Index ranges [lo, hi) of IMU samples in (t_{k-1}, t_k]; frame 0 takes everything up to t_0."""
    hi = np.searchsorted(imu_t, frame_t, side="right")
    lo = np.concatenate([[0], hi[:-1]])
    return np.stack([lo, hi], axis=1)


def stale_frames(imu_t: np.ndarray, frame_t: np.ndarray, dt: float) -> list[int]:
    """Frames lying inside IMU gaps longer than two frame periods."""
    if len(imu_t) == 0:
        return list(range(len(frame_t)))
    gaps = np.flatnonzero(np.diff(imu_t) > 2.0 * dt)
    out = set()
    for g in gaps:
        a, b = imu_t[g], imu_t[g + 1]
        out.update(np.flatnonzero((frame_t > a) & (frame_t <= b)).tolist())
    return sorted(out)


def truth_states(cols: dict) -> np.ndarray:
    """Full 11-vectors from truth columns, deriving missing rates by differencing.

    Without explicit rates, velocity and acceleration follow from the
    transition recursion: nu_k = (rho_{k+1} - rho_k) / dt and
    a_k = (nu_{k+1} - nu_k) / dt.
    """
    t = cols["t"]
    N = len(t)
    X = np.zeros((N, N_STATE))
    X[:, 0], X[:, 1], X[:, 2] = cols["x"], cols["y"], cols["z"]
    X[:, 9] = cols["yaw"]
    if all(c in cols for c in TRUTH_EXTRA):
        X[:, 3], X[:, 4], X[:, 5] = cols["vx"], cols["vy"], cols["vz"]
        X[:, 6], X[:, 7], X[:, 8] = cols["ax"], cols["ay"], cols["az"]
        X[:, 10] = cols["r"]
        return X
    if N >= 2:
        dt = np.diff(t)
        X[:-1, 3:6] = np.diff(X[:, 0:3], axis=0) / dt[:, None]
        X[-1, 3:6] = X[-2, 3:6]
        X[:-1, 10] = wrap_angle(np.diff(X[:, 9])) / dt
        X[-1, 10] = X[-2, 10]
    if N >= 3:
        X[:-1, 6:9] = np.diff(X[:, 3:6], axis=0) / dt[:, None]
        X[-1, 6:9] = X[-2, 6:9]
    return X


def intrinsics_from_config(cfg: dict) -> CameraIntrinsics:
    principal = None
    if "principal" in cfg:
        principal = tuple(float(v) for v in cfg["principal"].split())
    return CameraIntrinsics(
        rows=int(cfg.get("rows", 512)),
        cols=int(cfg.get("cols", 612)),
        focal=float(cfg.get("focal", 6e-3)),
        sensor_pitch=float(cfg["sensor_pitch"]) if "sensor_pitch" in cfg else None,
        principal=principal,
    )


def image_range(cfg: dict) -> tuple[float, float]:
    if "image_range" in cfg:
        lo, hi = (float(v) for v in str(cfg["image_range"]).split())
        return lo, hi
    return 0.0, 1.0


# -- writing ----------------------------------------------------------------

def write_dataset(directory, ds: Dataset, noise_variance: float | None = None) -> Path:
    """Write ``ds`` in the canonical layout; returns the directory.

    Emits a DatasetWarning when 16-bit quantization error is not at least
    ten times below the per-pixel noise variance.
    """
    directory = Path(directory)
    try:
        (directory / "images").mkdir(parents=True, exist_ok=True)
        cfg = dict(ds.config)
        intr = ds.intrinsics
        cfg.update(rows=intr.rows, cols=intr.cols, focal=intr.focal,
                   sensor_pitch=intr.sensor_pitch, principal=list(intr.principal))
        lo, hi = image_range(cfg)
        qerr = io.quantization_error(lo, hi)
        if noise_variance is not None and not qerr * 10.0 <= noise_variance:
            warnings.warn(
                f"16-bit quantization error {qerr:.3g} is not 10x below the pixel noise variance {noise_variance:.3g}",
                DatasetWarning, stacklevel=2,
            )
        io.write_keyvalue(directory / "config.txt", cfg)
        io.write_map(directory, ds.map_model)
        clipped = 0
        for k in range(len(ds)):
            codes, c = io.quantize(ds.image(k).scalar, lo, hi)
            clipped += c
            io.write_pgm(directory / "images" / f"{k:06d}.pgm", codes)
        if clipped:
            warnings.warn(f"{clipped} pixel values clipped to the image range [{lo}, {hi}]", DatasetWarning, stacklevel=2)
        imu = ds.imu
        header = list(IMU_COLUMNS)
        cols = [imu["t"], imu["accel"][:, 0], imu["accel"][:, 1], imu["accel"][:, 2], imu["gyro_z"]]
        if "quat" in imu:
            header += QUAT_COLUMNS
            cols += [imu["quat"][:, j] for j in range(4)]
        io.write_csv(directory / "imu.csv", header, zip(*cols))
        X = ds.truth
        io.write_csv(
            directory / "truth.csv",
            TRUTH_COLUMNS + TRUTH_EXTRA,
            zip(ds.times, X[:, 0], X[:, 1], X[:, 2], X[:, 9], X[:, 3], X[:, 4], X[:, 5],
                X[:, 6], X[:, 7], X[:, 8], X[:, 10]),
        )
    except OSError as exc:
        raise DatasetError(f"cannot write dataset at {exc.filename or directory}: {exc.strerror}") from exc
    return directory


def dataset_hash(directory) -> str:
    """SHA-256 over every file in the dataset, in sorted path order."""
    h = hashlib.sha256()
    directory = Path(directory)
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(directory)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# -- reading ----------------------------------------------------------------

def ingest(path, map_mode: str = "raster") -> Dataset:
    """Validate and open a dataset directory; frames load lazily.

    All schema violations found are reported together in one DatasetError.
    """
    path = Path(path)
    problems = []
    if not path.is_dir():
        raise DatasetError(f"{path}: dataset directory does not exist")
    required = ["config.txt", "map.pgm", "map.txt", "imu.csv", "truth.csv"]
    for name in required:
        if not (path / name).is_file():
            problems.append(f"{path / name}: missing")
    if not (path / "images").is_dir():
        problems.append(f"{path / 'images'}: missing directory")

    cfg = {}
    if (path / "config.txt").is_file():
        cfg = io.read_keyvalue(path / "config.txt")
    intr = None
    try:
        intr = intrinsics_from_config(cfg)
    except ValueError as exc:
        problems.append(f"{path / 'config.txt'}: bad intrinsics ({exc})")

    map_model = None
    if (path / "map.pgm").is_file() and (path / "map.txt").is_file():
        try:
            map_model = io.read_map(path / "map.pgm", path / "map.txt", mode=map_mode)
        except ValueError as exc:
            problems.append(str(exc))

    imu = None
    if (path / "imu.csv").is_file():
        try:
            cols, header = io.read_csv(path / "imu.csv", IMU_COLUMNS)
            imu = {"t": cols["t"], "accel": np.column_stack([cols["ax"], cols["ay"], cols["az"]]),
                   "gyro_z": cols["gz"]}
            if all(q in header for q in QUAT_COLUMNS):
                imu["quat"] = np.column_stack([cols[q] for q in QUAT_COLUMNS])
            if np.any(np.diff(imu["t"]) <= 0):
                bad = int(np.flatnonzero(np.diff(imu["t"]) <= 0)[0]) + 3
                problems.append(f"{path / 'imu.csv'}:{bad}: timestamps not strictly increasing")
        except ValueError as exc:
            problems.append(str(exc))

    times = truth = None
    if (path / "truth.csv").is_file():
        try:
            cols, _ = io.read_csv(path / "truth.csv", TRUTH_COLUMNS)
            times = cols["t"]
            truth = truth_states(cols)
            if len(times) == 0:
                problems.append(f"{path / 'truth.csv'}: no rows")
            elif np.any(np.diff(times) <= 0):
                bad = int(np.flatnonzero(np.diff(times) <= 0)[0]) + 3
                problems.append(f"{path / 'truth.csv'}:{bad}: timestamps not strictly increasing")
        except ValueError as exc:
            problems.append(str(exc))

    if times is not None and (path / "images").is_dir():
        missing = [k for k in range(len(times)) if not (path / "images" / f"{k:06d}.pgm").is_file()]
        if missing:
            shown = ", ".join(f"{k:06d}.pgm" for k in missing[:10])
            more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
            problems.append(f"{path / 'images'}: missing frames {shown}{more}")

    if problems:
        raise DatasetError(problems)

    lo, hi = image_range(cfg)
    grid = intr.grid

    def load(k: int) -> ImageField:
        fname = path / "images" / f"{k:06d}.pgm"
        try:
            codes, maxval = io.read_pgm(fname)
        except (OSError, ValueError) as exc:
            raise DatasetError(f"{fname}: {exc}") from exc
        if codes.shape != grid.dims:
            raise DatasetError(f"{fname}: frame is {codes.shape}, intrinsics say {grid.dims}")
        return ImageField(grid, io.dequantize(codes, lo, hi, maxval))

    ds = Dataset(cfg, map_model, intr, times, truth, imu, loader=load, path=path)
    dt = float(cfg.get("dt", ds.dt))
    stale = stale_frames(imu["t"], times, dt)
    if stale:
        msg = f"IMU gaps longer than two frame periods at frames {stale[:20]}{' ...' if len(stale) > 20 else ''}"
        ds.warnings.append(msg)
        warnings.warn(msg, DatasetWarning, stacklevel=2)
    return ds
