"""Error metrics and the per-run report."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from fieldekf.drone import wrap_angle


def _paired(est, truth, width=None):
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"estimate and truth lengths differ: {est.shape} vs {truth.shape}")
    if width is not None and (est.ndim != 2 or est.shape[1] != width):
        raise ValueError(f"expected (N, {width}) arrays, got {est.shape}")
    if est.shape[0] == 0:
        raise ValueError("no samples to compare")
    return est, truth


def position_errors(est, truth) -> np.ndarray:
    est, truth = _paired(est, truth, 3)
    return ((est - truth) ** 2).sum(axis=1)


def yaw_errors(est, truth) -> np.ndarray:
    est, truth = _paired(est, truth)
    return wrap_angle(est.reshape(-1) - truth.reshape(-1)) ** 2


def mse_position(est, truth) -> float:
    """Mean squared Euclidean position error (m^2)."""
    return float(position_errors(est, truth).mean())


def mse_yaw(est, truth) -> float:
    """Mean squared yaw error with differences wrapped to (-pi, pi] (rad^2)."""
    return float(yaw_errors(est, truth).mean())


def align(est_t, truth_t, tolerance: float) -> tuple[np.ndarray, np.ndarray]:
    """Pair each estimate with the nearest truth sample within ``tolerance``.

    Returns index arrays (into est, into truth) for the matched pairs.
    """
    est_t = np.asarray(est_t, dtype=float)
    truth_t = np.asarray(truth_t, dtype=float)
    if truth_t.size == 0 or est_t.size == 0:
        return np.zeros(0, int), np.zeros(0, int)
    j = np.clip(np.searchsorted(truth_t, est_t), 1, len(truth_t) - 1) if len(truth_t) > 1 else np.zeros(len(est_t), int)
    if len(truth_t) > 1:
        left = j - 1
        j = np.where(np.abs(est_t - truth_t[left]) <= np.abs(truth_t[j] - est_t), left, j)
    ok = np.abs(truth_t[j] - est_t) <= tolerance
    return np.flatnonzero(ok), j[ok]


@dataclass
class MetricsReport:
    e_rho: float
    e_theta: float
    pos_errors: np.ndarray
    yaw_errors: np.ndarray
    times: np.ndarray
    steps: int
    divergence_step: int | None = None
    divergence_reason: str = ""
    step_ms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    budget_ms: float = 1000.0 / 15.0
    sigma_a: float = float("nan")

    @property
    def diverged(self) -> bool:
        return self.divergence_step is not None

    def timing(self) -> dict:
        t = self.step_ms
        if t.size == 0:
            return {"median_ms": float("nan"), "mean_ms": float("nan"), "p95_ms": float("nan"),
                    "max_ms": float("nan"), "over_budget": 0.0}
        return {
            "median_ms": float(np.median(t)),
            "mean_ms": float(t.mean()),
            "p95_ms": float(np.percentile(t, 95)),
            "max_ms": float(t.max()),
            "over_budget": float((t > self.budget_ms).mean()),
        }

    def summary(self) -> dict:
        out = {
            "sigma_a": self.sigma_a,
            "e_rho": self.e_rho,
            "e_theta": self.e_theta,
            "steps": self.steps,
            "divergence_step": -1 if self.divergence_step is None else self.divergence_step,
        }
        out.update(self.timing())
        out["budget_ms"] = self.budget_ms
        return out


def write_metrics(path, report: MetricsReport) -> None:
    s = report.summary()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(s))
        w.writerow([repr(v) if isinstance(v, float) else v for v in s.values()])


def read_metrics(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return {k: float(v) for k, v in zip(rows[0], rows[1])}
