"""Run configuration: plain key-value files with ``--key=value`` overrides."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields

from fieldekf import io
from fieldekf.errors import ConfigError


@dataclass
class RunConfig:
    """Every knob of a filter run. Defaults follow the published filter table."""

    dataset: str = ""
    output: str = "out"
    # measurement noise
    sigma: float = 1e-2
    noise_model: str = "white"  # white | gaussian | file
    noise_length: float = 1.0
    noise_kernel: str = ""
    # process model
    dt: float = 0.0  # 0: take from the dataset timestamps
    imu_rate: float = 100.0
    camera_rate: float = 15.0
    sigma_a: float = 1.6e-2
    g_a: float = 1.94e-3
    sigma_b: float = 1.31e-4
    g_b: float = 3.96e-5
    p0: str = "Q"  # "Q" or a positive number (isotropic)
    # image conditioning
    blur: float = 0.5
    normalize: bool = False
    equalize: bool = False
    match: bool = False
    map_mode: str = "raster"
    # execution
    mode: str = "filter"  # filter | dead_reckoning
    deterministic: bool = True
    workers: int = 1
    seed: int = 0
    init_offset: str = ""  # up to 11 numbers added to the first truth row
    yaw_source: str = "estimate"  # estimate | dataset
    warmup: float = 0.0  # seconds excluded from the metrics
    divergence_factor: float = 10.0
    budget_ms: float = 1000.0 / 15.0
    # sweeps
    sweep_start: float = 1e-3
    sweep_factor: float = 2.0
    sweep_steps: int = 14
    sweep_cap: float = 100.0
    sweep_workers: int = 1

    def __post_init__(self):
        choices = {
            "noise_model": ("white", "gaussian", "file"),
            "mode": ("filter", "dead_reckoning"),
            "map_mode": ("raster", "analytic"),
            "yaw_source": ("estimate", "dataset"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        for key in ("sigma", "imu_rate", "camera_rate", "divergence_factor", "sweep_factor"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        for key in ("sigma_a", "g_a", "sigma_b", "g_b", "blur", "warmup", "dt"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be non-negative")
        if self.sweep_steps < 1 or self.workers < 1 or self.sweep_workers < 1:
            raise ConfigError("sweep_steps, workers and sweep_workers must be at least 1")
        if self.noise_model == "file" and not self.noise_kernel:
            raise ConfigError("noise_model=file needs noise_kernel=<path>")
        self.initial_offset()
        self.p0_scale()

    def initial_offset(self) -> list[float]:
        try:
            vals = [float(v) for v in self.init_offset.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"init_offset must be numbers, got {self.init_offset!r}") from None
        if len(vals) > 11:
            raise ConfigError("init_offset has more than 11 entries")
        return vals + [0.0] * (11 - len(vals))

    def p0_scale(self) -> float | None:
        """None for P0 = Q, else the isotropic initial variance."""
        if self.p0.strip().upper() == "Q":
            return None
        try:
            v = float(self.p0)
        except ValueError:
            raise ConfigError(f"p0 must be 'Q' or a number, got {self.p0!r}") from None
        if not v > 0:
            raise ConfigError("p0 must be positive")
        return v

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(name: str, kind, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind.__name__}") from None


def from_mapping(cls, values: dict):
    """Build a config dataclass from strings or typed values; unknown keys are rejected."""
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls) if f.init}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    kwargs = {}
    for key, raw in values.items():
        kind = hints[key]
        members = [a for a in typing.get_args(kind) if a is not type(None)]
        optional = len(members) < len(typing.get_args(kind))
        base = members[0] if members and optional else kind
        if optional and isinstance(raw, str) and raw.strip().lower() in ("", "none"):
            kwargs[key] = None
        elif base in (bool, int, float, str):
            kwargs[key] = _coerce(key, base, raw)
        elif base is tuple and isinstance(raw, str):
            # flat "x y x y ..." pairs
            nums = [_coerce(key, float, v) for v in raw.replace(",", " ").split()]
            if len(nums) % 2:
                raise ConfigError(f"{key}: expected x y pairs, got {len(nums)} numbers")
            kwargs[key] = tuple(zip(nums[0::2], nums[1::2]))
        else:
            kwargs[key] = raw
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def parse_overrides(args) -> dict:
    """``--key=value`` (or ``--key value``) tokens to a dict; dashes become underscores."""
    out = {}
    args = list(args)
    i = 0
    while i < len(args):
        tok = args[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
        elif i + 1 < len(args) and not args[i + 1].startswith("--"):
            key, value = body, args[i + 1]
            i += 1
        else:
            key, value = body, "true"
        out[key.replace("-", "_")] = value
        i += 1
    return out


def load_config(path=None, overrides: dict | None = None, cls=RunConfig):
    values = {}
    if path:
        try:
            values.update(io.read_keyvalue(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    values.update(overrides or {})
    return from_mapping(cls, values)
