"""Accelerometer noise-density sweeps."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from fieldekf.dataset import Dataset, ingest
from fieldekf.harness.config import RunConfig
from fieldekf.harness.metrics import MetricsReport
from fieldekf.harness.runner import run_dataset

SWEEP_COLUMNS = ["sigma_a", "log2_sigma_a", "e_rho", "e_theta", "divergence_step", "over_cap"]


def ladder(start: float = 1e-3, steps: int = 14, factor: float = 2.0) -> np.ndarray:
    """Geometric ladder start * factor**j, j = 0 .. steps-1."""
    if steps < 1 or not start > 0 or not factor > 0:
        raise ValueError("ladder needs steps >= 1 and positive start and factor")
    return start * factor ** np.arange(steps, dtype=float)


@dataclass
class SweepRow:
    sigma_a: float
    report: MetricsReport
    over_cap: bool

    def values(self) -> list:
        r = self.report
        return [self.sigma_a, math.log2(self.sigma_a), r.e_rho, r.e_theta,
                -1 if r.divergence_step is None else r.divergence_step, int(self.over_cap)]


def _one(args):
    path, cfg = args
    return run_dataset(ingest(path), cfg).report


def sweep(ds: Dataset | str, cfg: RunConfig, sigmas=None) -> list[SweepRow]:
    """One run per density, each with its own Q; diverged runs are recorded and the sweep goes on.

    With a dataset path and ``cfg.sweep_workers > 1`` runs go to a process
    pool; every run re-reads the dataset, so runs share no state.
    """
    if sigmas is None:
        sigmas = ladder(cfg.sweep_start, cfg.sweep_steps, cfg.sweep_factor)
    cfgs = [cfg.replace(sigma_a=float(s)) for s in sigmas]
    if isinstance(ds, (str,)) or hasattr(ds, "__fspath__"):
        if cfg.sweep_workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.sweep_workers) as pool:
                reports = list(pool.map(_one, [(str(ds), c) for c in cfgs]))
        else:
            handle = ingest(ds)
            reports = [run_dataset(handle, c).report for c in cfgs]
    else:
        reports = [run_dataset(ds, c).report for c in cfgs]
    rows = []
    for s, rep in zip(sigmas, reports):
        over = rep.diverged or not np.isfinite(rep.e_rho) or rep.e_rho > cfg.sweep_cap
        rows.append(SweepRow(float(s), rep, bool(over)))
    return rows


def write_sweep(path, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])


def read_sweep(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(header))
    return {name: data[:, j] for j, name in enumerate(header)}
