"""Synthetic flights: bump maps, smooth trajectories, IMU streams and noisy frames.

Truth states satisfy the discrete transition exactly: x_{k+1} = A x_k + u_k
where u_k carries the acceleration and yaw rate of step k+1. The IMU stream
is built from those same per-step values, so a noise-free replay started at
the truth is a fixed point of the filter.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from fieldekf import io
from fieldekf.camera import CameraIntrinsics, GaussianBumps, MapModel, render_expected
from fieldekf.dataset import Dataset, write_dataset
from fieldekf.drone import ACC, GRAVITY, N_STATE, POS, VEL, YAW, YAW_RATE, NoiseDensities, propagate, wrap_angle
from fieldekf.fields import ImageField
from fieldekf.spectral import StationaryKernel, gaussian_kernel, sample_noise_field

SEED_MASK = (1 << 64) - 1

__all__ = [
    "SimConfig", "TrajectorySpec", "Trajectory", "generate_map", "generate_trajectory",
    "synthesize_imu", "render_measurement", "noise_kernel", "simulate", "write_dataset",
]


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.uint64(int(seed) & SEED_MASK))


# -- maps -------------------------------------------------------------------

def generate_map(K: int, extent: float = 170.0, pitch: float = 0.25, seed: int = 0,
                 width_range=(2.0, 6.0), centers=None, widths=None, amplitudes=None,
                 quantize: bool = True) -> MapModel:
    """Square map of K Gaussian bumps normalized to [0, 1].

    Bump parameters are drawn from ``seed`` unless given explicitly. The
    raster is accumulated with separable windows of six widths per bump; the
    analytic description keeps the offset and gain used for normalization.
    With ``quantize`` the raster is snapped to 16-bit levels so that writing
    and re-reading the map is exact.
    """
    if K < 0:
        raise ValueError("bump count must be non-negative")
    n = int(round(extent / pitch)) + 1
    coords = np.arange(n) * pitch
    rng = _rng(seed)
    if centers is None:
        centers = rng.uniform(0.0, extent, size=(K, 2))
    if widths is None:
        widths = rng.uniform(width_range[0], width_range[1], size=K)
    if amplitudes is None:
        amplitudes = rng.uniform(-1.0, 1.0, size=K)
    centers = np.asarray(centers, dtype=float).reshape(K, 2)
    widths = np.asarray(widths, dtype=float).reshape(K)
    amplitudes = np.asarray(amplitudes, dtype=float).reshape(K)

    raw = np.zeros((n, n))
    for (cx, cy), w, a in zip(centers, widths, amplitudes):
        r = 6.0 * w
        c0, c1 = np.searchsorted(coords, [cx - r, cx + r])
        r0, r1 = np.searchsorted(coords, [cy - r, cy + r])
        ex = np.exp(-((coords[c0:c1] - cx) ** 2) / (2 * w * w))
        ey = np.exp(-((coords[r0:r1] - cy) ** 2) / (2 * w * w))
        raw[r0:r1, c0:c1] += a * np.outer(ey, ex)

    lo, hi = float(raw.min()), float(raw.max())
    if hi - lo < 1e-12:
        # flat map: mid-grey everywhere
        offset, gain = 0.5 - lo, 1.0
        intensity = np.full_like(raw, 0.5)
    else:
        offset, gain = -lo, 1.0 / (hi - lo)
        intensity = np.clip((raw + offset) * gain, 0.0, 1.0)
    if quantize:
        intensity = io.dequantize(io.quantize(intensity)[0])
    bumps = GaussianBumps(centers, widths, amplitudes, offset, gain)
    return MapModel(intensity, (pitch, pitch), (0.0, 0.0), analytic=bumps)


# -- trajectories -----------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySpec:
    """Flight pattern and timing.

    ``pattern`` is "lawnmower", "circuit" or "waypoints" (``waypoints`` as an
    (N, 2) sequence of map-relative x, y). Patterns are centered on
    ``center``; corners are rounded with arcs of ``turn_radius`` so the path
    is C1 with bounded acceleration.
    """

    pattern: str = "lawnmower"
    altitude: float = 40.0
    speed: float = 2.0
    duration: float = 120.0
    dt: float = 1.0 / 15.0
    seed: int = 0
    leg_length: float = 60.0
    spacing: float = 20.0
    turn_radius: float | None = None
    waypoints: tuple = ()
    center: tuple = (85.0, 85.0)

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if self.altitude <= 0 or self.duration <= 0 or self.dt <= 0:
            raise ValueError("altitude, duration and dt must be positive")
        if self.pattern not in ("lawnmower", "circuit", "waypoints"):
            raise ValueError(f"unknown trajectory pattern {self.pattern!r}")

    @property
    def frames(self) -> int:
        return int(math.floor(self.duration / self.dt + 1e-9))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (N, 11)
    inputs: np.ndarray  # (N - 1, 11); states[k+1] = A states[k] + inputs[k]
    spec: TrajectorySpec
    length: float


class _Path:
    """Arc-length parameterized polyline with circular fillets."""

    def __init__(self, points, radius: float, closed: bool = False):
        pts = np.asarray(points, dtype=float)
        if closed:
            pts = np.vstack([pts, pts[:1]])
        self.segments = []  # ("line", start, dir, length) or ("arc", center, r, a0, sweep)
        n = len(pts)
        dirs = np.diff(pts, axis=0)
        lens = np.linalg.norm(dirs, axis=1)
        if np.any(lens <= 0):
            raise ValueError("repeated waypoint")
        dirs = dirs / lens[:, None]
        cut_in = np.zeros(n - 1)  # trimmed from the start of each leg
        cut_out = np.zeros(n - 1)
        corners = []
        idx = range(1, n - 1) if not closed else range(1, n)
        for j in idx:
            d1 = dirs[j - 1]
            d2 = dirs[j % (n - 1)] if closed else dirs[j]
            cross = d1[0] * d2[1] - d1[1] * d2[0]
            phi = math.atan2(cross, float(d1 @ d2))
            if abs(phi) < 1e-12:
                corners.append(None)
                continue
            T = radius * math.tan(abs(phi) / 2.0)
            nxt = j % (n - 1) if closed else j
            cut_out[j - 1] = T
            cut_in[nxt] = T
            corners.append((j, d1, d2, phi, T))
        if np.any(cut_in + cut_out > lens + 1e-9):
            raise ValueError("turn radius too large for the waypoint spacing")
        arcs = {c[0]: c for c in corners if c is not None}
        for j in range(n - 1):
            start = pts[j] + dirs[j] * cut_in[j]
            L = lens[j] - cut_in[j] - cut_out[j]
            if L > 0:
                self.segments.append(("line", start, dirs[j], L))
            if j + 1 in arcs:
                _, d1, d2, phi, T = arcs[j + 1]
                a = pts[j + 1] - d1 * T
                normal = np.array([-d1[1], d1[0]]) * math.copysign(1.0, phi)
                center = a + normal * radius
                a0 = math.atan2(a[1] - center[1], a[0] - center[0])
                self.segments.append(("arc", center, radius, a0, phi, abs(phi) * radius))
        self.lengths = np.array([s[3] if s[0] == "line" else s[5] for s in self.segments])
        self.total = float(self.lengths.sum())
        self.bounds = np.concatenate([[0.0], np.cumsum(self.lengths)])

    def position(self, s: np.ndarray, cyclic: bool = False):
        """Positions and unit tangents at arc lengths s."""
        s = np.asarray(s, dtype=float)
        if cyclic:
            s = np.mod(s, self.total)
        elif np.any(s > self.total + 1e-9):
            raise ValueError("trajectory duration exceeds the path length")
        seg = np.clip(np.searchsorted(self.bounds, s, side="right") - 1, 0, len(self.segments) - 1)
        pos = np.empty(s.shape + (2,))
        tan = np.empty(s.shape + (2,))
        for j, sg in enumerate(self.segments):
            sel = seg == j
            if not sel.any():
                continue
            ds = s[sel] - self.bounds[j]
            if sg[0] == "line":
                _, start, d, _ = sg
                pos[sel] = start + ds[:, None] * d
                tan[sel] = d
            else:
                _, center, r, a0, phi, _ = sg
                ang = a0 + math.copysign(1.0, phi) * ds / r
                pos[sel] = center + r * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
                sgn = math.copysign(1.0, phi)
                tan[sel] = sgn * np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
        return pos, tan


def _pattern_path(spec: TrajectorySpec, needed: float) -> tuple[_Path, bool]:
    R = spec.turn_radius if spec.turn_radius is not None else spec.spacing / 2.0
    cx, cy = spec.center
    if spec.pattern == "lawnmower":
        L, s = spec.leg_length, spec.spacing
        # each turn trims R from two legs and adds a half circle
        per_turn = math.pi * R - 2.0 * R
        legs = 1
        while legs * L + (legs - 1) * per_turn < needed:
            legs += 1
        pts = []
        for j in range(legs):
            xs = (0.0, L) if j % 2 == 0 else (L, 0.0)
            pts += [(xs[0], j * s), (xs[1], j * s)]
        pts = np.array(pts)
        pts = pts - (pts.min(axis=0) + 0.5 * np.ptp(pts, axis=0))
        return _Path(pts + (cx, cy), R), False
    if spec.pattern == "circuit":
        w, h = spec.leg_length, 2.0 * spec.spacing
        pts = np.array([(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)]) + (cx, cy)
        return _Path(pts, min(R, h / 2.0), closed=True), True
    pts = np.asarray(spec.waypoints, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise ValueError("waypoint pattern needs at least two waypoints")
    return _Path(pts + (cx, cy), R), False


def footprint_radius(altitude: float, intr: CameraIntrinsics) -> float:
    """Half-diagonal of the ground footprint at the given height."""
    half = np.array([intr.cols, intr.rows]) * intr.sensor_pitch / 2.0
    return float(altitude * np.hypot(*half) / intr.focal)


def generate_trajectory(spec: TrajectorySpec, intr: CameraIntrinsics | None = None,
                        map_model: MapModel | None = None) -> Trajectory:
    """Sample the pattern at the frame rate and build recursion-exact states.

    Positions along the continuous path give per-step velocities and
    accelerations by differencing; the states are then re-integrated through
    the transition so the recursion residual is zero by construction. When a
    map is given, every position must keep a footprint half-diagonal of
    margin to the map border.
    """
    N = spec.frames
    dt = spec.dt
    times = np.arange(N) * dt
    # positions at k = 0..N+1 so that velocity and acceleration exist for every frame
    s = spec.speed * np.arange(N + 2) * dt
    if spec.speed == 0:
        pos = np.tile(np.asarray(spec.center, dtype=float), (N + 2, 1))
        heading = np.zeros(N + 2)
        length = 0.0
    else:
        path, cyclic = _pattern_path(spec, float(s[-1]))
        pos, tan = path.position(s, cyclic=cyclic)
        # yaw measured from the x (east) axis, counter-clockwise
        heading = np.arctan2(tan[:, 1], tan[:, 0])
        length = float(spec.speed * (N - 1) * dt)
    P = np.column_stack([pos, np.full(N + 2, spec.altitude)])
    nu = np.diff(P, axis=0) / dt  # k = 0..N
    acc = np.diff(nu, axis=0) / dt  # k = 0..N-1
    rate = wrap_angle(np.diff(heading)) / dt  # k = 0..N

    inputs = np.zeros((max(N - 1, 0), N_STATE))
    inputs[:, ACC] = acc[1:N]
    inputs[:, YAW_RATE] = rate[1:N]
    X = np.zeros((N, N_STATE))
    X[0, POS] = P[0]
    X[0, VEL] = nu[0]
    X[0, ACC] = acc[0]
    X[0, YAW] = wrap_angle(heading[0])
    X[0, YAW_RATE] = rate[0]
    for k in range(N - 1):
        X[k + 1] = propagate(X[k], inputs[k], dt)

    if map_model is not None and intr is not None:
        margin = footprint_radius(spec.altitude, intr)
        W, H = map_model.extent
        ox, oy = map_model.origin[1], map_model.origin[0]
        x, y = X[:, 0], X[:, 1]
        bad = (x - margin < ox) | (x + margin > ox + W) | (y - margin < oy) | (y + margin > oy + H)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"trajectory leaves the map margin ({margin:.1f} m) at frame {k}, position ({x[k]:.1f}, {y[k]:.1f})"
            )
    return Trajectory(times, X, inputs, spec, length)


# -- IMU --------------------------------------------------------------------

def imu_times(frame_times: np.ndarray, imu_rate: float) -> np.ndarray:
    """Sample instants j / rate covering [t_0, t_last]."""
    j0 = int(math.ceil(frame_times[0] * imu_rate - 1e-9))
    j1 = int(math.floor(frame_times[-1] * imu_rate + 1e-9))
    return np.arange(j0, j1 + 1) / imu_rate


def synthesize_imu(traj: Trajectory, dens: NoiseDensities, imu_rate: float = 100.0, seed: int = 0) -> dict:
    """IMU stream whose window (t_{k-1}, t_k] reads the true values of step k.

    Specific force is the true acceleration plus gravity on the vertical
    axis, rotated into the body frame by the true yaw. White noise has
    per-sample standard deviation density * sqrt(rate).
    """
    if imu_rate * traj.spec.dt < 1.0 - 1e-9:
        raise ValueError("IMU rate must be at least the frame rate")
    ft = traj.times
    t = imu_times(ft, imu_rate)
    k = np.minimum(np.searchsorted(ft, t, side="left"), len(ft) - 1)
    X = traj.states[k]
    th = X[:, YAW]
    c, s = np.cos(th), np.sin(th)
    ax, ay = X[:, 6], X[:, 7]
    f = np.column_stack([c * ax + s * ay, -s * ax + c * ay, X[:, 8] + GRAVITY])
    gz = X[:, YAW_RATE].copy()
    rng = _rng(seed)
    f = f + rng.standard_normal(f.shape) * dens.sigma_a * math.sqrt(imu_rate)
    gz = gz + rng.standard_normal(gz.shape) * dens.g_a * math.sqrt(imu_rate)
    return {"t": t, "accel": f, "gyro_z": gz}


# -- frames -----------------------------------------------------------------

def noise_kernel(model: str = "white", sigma: float = 1e-2, length_scale: float = 1.0) -> StationaryKernel:
    if model == "white":
        return StationaryKernel.white(sigma)
    if model == "gaussian":
        return gaussian_kernel(length_scale, variance=sigma)
    raise ValueError(f"unknown noise model {model!r}")


def pixel_variance(kernel: StationaryKernel, cell_area: float = 1.0) -> float:
    if kernel.is_white:
        return float(kernel.sigma[0, 0]) / cell_area
    a, b = kernel.half_width
    return float(kernel.values[a, b, 0, 0])


def render_measurement(x, map_model: MapModel, intr: CameraIntrinsics,
                       noise: StationaryKernel | None, seed: int) -> ImageField:
    """Expected image at the true state plus a sampled noise field."""
    img = render_expected(x, intr, map_model)
    if noise is None or pixel_variance(noise) == 0.0:
        return img
    v = sample_noise_field(noise, img.grid, seed)
    return ImageField(img.grid, img.data + v.data, img.valid)


# -- whole datasets ---------------------------------------------------------

@dataclass
class SimConfig:
    """Every parameter of a synthetic flight; seeds default from ``seed``."""

    seed: int = 0
    map_seed: int | None = None
    imu_seed: int | None = None
    noise_seed: int | None = None
    bumps: int | None = None  # default: one per 20 m^2
    map_extent: float = 170.0
    map_pitch: float = 0.25
    bump_width_min: float = 2.0
    bump_width_max: float = 6.0
    pattern: str = "lawnmower"
    altitude: float = 40.0
    speed: float = 2.0
    duration: float = 120.0
    dt: float = 1.0 / 15.0
    leg_length: float = 60.0
    spacing: float = 20.0
    waypoints: tuple = ()
    rows: int = 128
    cols: int = 128
    focal: float = 6e-3
    imu_rate: float = 100.0
    sigma_a: float = 1.6e-2
    g_a: float = 1.94e-3
    noise_model: str = "white"
    noise_sigma: float = 1e-2
    noise_length: float = 1.0
    extra: dict = field(default_factory=dict)

    def seeds(self) -> tuple[int, int, int]:
        base = int(self.seed)
        pick = lambda v, off: (base + off) & SEED_MASK if v is None else int(v) & SEED_MASK
        return pick(self.map_seed, 0), pick(self.imu_seed, 1), pick(self.noise_seed, 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        d["map_seed"], d["imu_seed"], d["noise_seed"] = self.seeds()
        if d["bumps"] is None:
            d["bumps"] = self.bump_count()
        d["waypoints"] = " ".join(f"{x!r} {y!r}" for x, y in self.waypoints) if self.waypoints else ""
        return d

    def bump_count(self) -> int:
        return self.bumps if self.bumps is not None else int(self.map_extent**2 / 20.0)


def simulate(cfg: SimConfig, progress=None) -> Dataset:
    """Generate a complete in-memory dataset from ``cfg``."""
    map_seed, imu_seed, noise_seed = cfg.seeds()
    map_model = generate_map(cfg.bump_count(), cfg.map_extent, cfg.map_pitch, map_seed,
                             (cfg.bump_width_min, cfg.bump_width_max))
    intr = CameraIntrinsics(rows=cfg.rows, cols=cfg.cols, focal=cfg.focal)
    W, H = map_model.extent
    spec = TrajectorySpec(cfg.pattern, cfg.altitude, cfg.speed, cfg.duration, cfg.dt, cfg.seed,
                          cfg.leg_length, cfg.spacing, None, tuple(cfg.waypoints),
                          (map_model.origin[1] + W / 2, map_model.origin[0] + H / 2))
    traj = generate_trajectory(spec, intr, map_model)
    dens = NoiseDensities(sigma_a=cfg.sigma_a, g_a=cfg.g_a)
    imu = synthesize_imu(traj, dens, cfg.imu_rate, imu_seed)
    kernel = noise_kernel(cfg.noise_model, cfg.noise_sigma, cfg.noise_length)
    var = pixel_variance(kernel)
    frames = []
    for k, x in enumerate(traj.states):
        # one noise stream per frame, derived from the noise seed
        frames.append(render_measurement(x, map_model, intr, kernel, (noise_seed + 7919 * k) & SEED_MASK))
        if progress is not None:
            progress(k)
    sd = math.sqrt(var)
    config = cfg.to_dict()
    config.update(cfg.extra)
    config["image_range"] = f"{-6 * sd!r} {1 + 6 * sd!r}"
    config["frames"] = len(frames)
    return Dataset(config, map_model, intr, traj.times, traj.states, imu, frames=frames)


def simulate_to(directory, cfg: SimConfig) -> Dataset:
    ds = simulate(cfg)
    kernel = noise_kernel(cfg.noise_model, cfg.noise_sigma, cfg.noise_length)
    write_dataset(directory, ds, noise_variance=pixel_variance(kernel) or None)
    return ds
