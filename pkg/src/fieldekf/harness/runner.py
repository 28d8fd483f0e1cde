"""Filter execution over a dataset."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fieldekf import io
from fieldekf.camera import CameraMeasurementModel, PreprocessConfig
from fieldekf.dataset import Dataset
from fieldekf.drone import NoiseDensities, YAW, YAW_RATE, build_input, process_model, wrap_angle
from fieldekf.errors import DivergenceError, TerrainError
from fieldekf.filter import FilterState, predict_covariance, predict_state, step, symmetrize
from fieldekf.harness.config import RunConfig
from fieldekf.harness.metrics import MetricsReport, align, position_errors, write_metrics, yaw_errors
from fieldekf.spectral import StationaryKernel, gaussian_kernel, read_kernel

ESTIMATE_COLUMNS = ["t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "yaw", "r", "trP"]


@dataclass
class RunResult:
    times: np.ndarray
    estimates: np.ndarray  # (steps, 11)
    trace_P: np.ndarray
    report: MetricsReport
    stale_frames: list


def noise_from_config(cfg: RunConfig) -> StationaryKernel:
    if cfg.noise_model == "white":
        return StationaryKernel.white(cfg.sigma)
    if cfg.noise_model == "gaussian":
        return gaussian_kernel(cfg.noise_length, variance=cfg.sigma)
    return read_kernel(cfg.noise_kernel)


def measurement_model(ds: Dataset, cfg: RunConfig) -> CameraMeasurementModel:
    map_model = ds.map_model if ds.map_model.mode == cfg.map_mode else ds.map_model.with_mode(cfg.map_mode)
    pre = PreprocessConfig(cfg.blur, cfg.normalize, cfg.equalize, cfg.match)
    return CameraMeasurementModel(ds.intrinsics, map_model, pre)


def _yaw_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q.T
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def run_dataset(ds: Dataset, cfg: RunConfig, observer=None) -> RunResult:
    """Run the filter (or dead reckoning) over every frame of ``ds``.

    The estimate starts at the first truth row plus ``cfg.init_offset`` with
    P0 = Q. ``observer(k, state)`` is called after every filter step. A run
    stops early when the position error exceeds ``divergence_factor`` times
    the larger map side or a filter quantity turns non-finite.
    """
    times = ds.times
    N = len(times)
    dt = cfg.dt if cfg.dt > 0 else ds.dt
    dens = NoiseDensities(cfg.sigma_a, cfg.g_a, cfg.sigma_b, cfg.g_b)
    process = process_model(dens, dt)
    P0 = process.Q.copy() if cfg.p0_scale() is None else cfg.p0_scale() * np.eye(process.Q.shape[0])
    x0 = ds.truth[0] + np.asarray(cfg.initial_offset())
    x0[YAW] = wrap_angle(x0[YAW])
    state = FilterState(x0, P0, k=0)
    noise = noise_from_config(cfg)
    meas = measurement_model(ds, cfg)
    workers = 1 if cfg.deterministic else cfg.workers
    limit = cfg.divergence_factor * max(ds.map_model.extent)
    use_quat = cfg.yaw_source == "dataset" and "quat" in ds.imu

    est = np.zeros((N, x0.size))
    trP = np.zeros(N)
    est[0], trP[0] = state.x_hat, np.trace(state.P)
    step_ms = []
    stale = []
    done = 1
    div_step, reason = None, ""
    for k in range(1, N):
        win = ds.imu_window(k)
        theta_hat = wrap_angle(state.x_hat[YAW] + state.x_hat[YAW_RATE] * dt)
        yaw_src = _yaw_from_quat(win["quat"]) if use_quat and len(win["t"]) else None
        t0 = time.perf_counter()
        try:
            inp = build_input(win, theta_hat, times[k - 1], times[k], yaw_source=yaw_src)
            if inp.stale:
                stale.append(k)
            if cfg.mode == "dead_reckoning":
                x = predict_state(state, process, inp.u)
                P = symmetrize(predict_covariance(state, process))
                state = FilterState(x, P, k=k, x_prior=x, P_prior=P)
            else:
                state = step(state, process, meas, noise, ds.image(k), u=inp.u, workers=workers)
        except (DivergenceError, TerrainError) as exc:
            div_step, reason = k, str(exc)
            break
        step_ms.append((time.perf_counter() - t0) * 1e3)
        if observer is not None:
            observer(k, state)
        est[k], trP[k] = state.x_hat, np.trace(state.P)
        done = k + 1
        if np.linalg.norm(state.x_hat[:3] - ds.truth[k, :3]) > limit:
            div_step, reason = k, f"position error exceeds {limit:.0f} m"
            break

    est, trP, t_est = est[:done], trP[:done], times[:done]
    keep = t_est >= times[0] + cfg.warmup
    ei, ti = align(t_est[keep], times, 0.5 * dt)
    ei = np.flatnonzero(keep)[ei]
    pe = position_errors(est[ei, :3], ds.truth[ti, :3]) if ei.size else np.zeros(0)
    ye = yaw_errors(est[ei, YAW], ds.truth[ti, YAW]) if ei.size else np.zeros(0)
    report = MetricsReport(
        e_rho=float(pe.mean()) if pe.size else float("nan"),
        e_theta=float(ye.mean()) if ye.size else float("nan"),
        pos_errors=pe, yaw_errors=ye, times=t_est[ei], steps=done,
        divergence_step=div_step, divergence_reason=reason,
        step_ms=np.asarray(step_ms), budget_ms=cfg.budget_ms, sigma_a=cfg.sigma_a,
    )
    return RunResult(t_est, est, trP, report, stale)


def write_estimates(path, result: RunResult) -> None:
    e = result.estimates
    rows = (
        [t, *row, tr] for t, row, tr in zip(result.times, e, result.trace_P)
    )
    io.write_csv(path, ESTIMATE_COLUMNS, rows)


def read_estimates(path):
    cols, _ = io.read_csv(path, ESTIMATE_COLUMNS)
    return cols


def write_run(directory, result: RunResult) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_estimates(directory / "estimates.csv", result)
    write_metrics(directory / "metrics.csv", result.report)
    return directory
