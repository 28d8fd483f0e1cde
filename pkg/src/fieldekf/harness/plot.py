"""Deterministic SVG plots with plain-text ``.dat`` companions.

Numbers are printed with fixed precision so identical inputs give
byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN = 60
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * j / (count - 1) for j in range(count)]


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xr, yr, equal: bool = False):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        x0, x1 = xr
        y0, y1 = yr
        if x1 <= x0:
            x0, x1 = x0 - 1.0, x1 + 1.0
        if y1 <= y0:
            y0, y1 = y0 - 1.0, y1 + 1.0
        if equal:
            span = max(x1 - x0, y1 - y0)
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            x0, x1, y0, y1 = cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2
        self.xr, self.yr = (x0, x1), (y0, y1)
        self.items = []

    def sx(self, x):
        return MARGIN + (x - self.xr[0]) / (self.xr[1] - self.xr[0]) * (WIDTH - 2 * MARGIN)

    def sy(self, y):
        return HEIGHT - MARGIN - (y - self.yr[0]) / (self.yr[1] - self.yr[0]) * (HEIGHT - 2 * MARGIN)

    def polyline(self, x, y, color, label, marker=False):
        pts = " ".join(f"{_fmt(self.sx(a))},{_fmt(self.sy(b))}" for a, b in zip(x, y))
        self.items.append(
            f'<polyline class="series" data-label="{label}" fill="none" stroke="{color}" '
            f'stroke-width="1.5" points="{pts}"/>'
        )
        if marker:
            for a, b in zip(x, y):
                self.items.append(f'<circle cx="{_fmt(self.sx(a))}" cy="{_fmt(self.sy(b))}" r="3" fill="{color}"/>')

    def note(self, text):
        self.items.append(f'<text x="{WIDTH // 2}" y="{HEIGHT // 2}" text-anchor="middle">{text}</text>')

    def render(self, legend, xticks=None, xtick_labels=None) -> str:
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-size="16">{self.title}</text>',
            f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" height="{HEIGHT - 2 * MARGIN}" '
            'fill="none" stroke="black"/>',
        ]
        xticks = _ticks(*self.xr) if xticks is None else xticks
        labels = [f"{t:.3g}" for t in xticks] if xtick_labels is None else xtick_labels
        for t, lab in zip(xticks, labels):
            X = _fmt(self.sx(t))
            out.append(f'<line class="xtick" x1="{X}" y1="{HEIGHT - MARGIN}" x2="{X}" y2="{HEIGHT - MARGIN + 5}" stroke="black"/>')
            out.append(f'<text x="{X}" y="{HEIGHT - MARGIN + 18}" text-anchor="middle" font-size="10">{lab}</text>')
        for t in _ticks(*self.yr):
            Y = _fmt(self.sy(t))
            out.append(f'<line x1="{MARGIN - 5}" y1="{Y}" x2="{MARGIN}" y2="{Y}" stroke="black"/>')
            out.append(f'<text x="{MARGIN - 8}" y="{Y}" text-anchor="end" font-size="10">{t:.3g}</text>')
        out.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle">{self.xlabel}</text>')
        out.append(f'<text x="16" y="{HEIGHT // 2}" transform="rotate(-90 16 {HEIGHT // 2})" '
                   f'text-anchor="middle">{self.ylabel}</text>')
        out.extend(self.items)
        for j, (label, color) in enumerate(legend):
            y = MARGIN + 14 + 16 * j
            out.append(f'<line x1="{WIDTH - MARGIN - 110}" y1="{y}" x2="{WIDTH - MARGIN - 90}" y2="{y}" stroke="{color}"/>')
            out.append(f'<text x="{WIDTH - MARGIN - 85}" y="{y + 4}" font-size="11">{label}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _range(*arrays):
    vals = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]) if arrays else np.zeros(0)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return (0.0, 1.0)
    return (float(vals.min()), float(vals.max()))


def write_dat(path, header, columns) -> None:
    lines = ["# " + " ".join(header)]
    for row in zip(*columns):
        lines.append(" ".join(f"{float(v):.9g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def trajectory_svg(est_xy, truth_xy) -> str:
    """Planar overlay: exactly one polyline each for the estimate and the truth."""
    est_xy = np.asarray(est_xy, dtype=float).reshape(-1, 2)
    truth_xy = np.asarray(truth_xy, dtype=float).reshape(-1, 2)
    c = _Canvas("Planar trajectory", "x east (m)", "y north (m)",
                _range(est_xy[:, 0], truth_xy[:, 0]), _range(est_xy[:, 1], truth_xy[:, 1]), equal=True)
    if len(est_xy) == 0 and len(truth_xy) == 0:
        c.note("no data")
    c.polyline(truth_xy[:, 0], truth_xy[:, 1], COLORS[0], "truth")
    c.polyline(est_xy[:, 0], est_xy[:, 1], COLORS[1], "estimate")
    return c.render([("truth", COLORS[0]), ("estimate", COLORS[1])])


def series_svg(title, ylabel, t, series: dict) -> str:
    t = np.asarray(t, dtype=float)
    c = _Canvas(title, "t (s)", ylabel, _range(t), _range(*series.values()) if series else (0, 1))
    legend = []
    if t.size == 0:
        c.note("no data")
    for j, (label, y) in enumerate(series.items()):
        color = COLORS[j % len(COLORS)]
        c.polyline(t, y, color, label)
        legend.append((label, color))
    return c.render(legend)


def sweep_svg(sigmas, e_rho, cap: float = 100.0) -> str:
    """E_rho against sigma_a on a log2 axis; values above ``cap`` are omitted."""
    sigmas = np.asarray(sigmas, dtype=float)
    e_rho = np.asarray(e_rho, dtype=float)
    lx = np.log2(sigmas) if sigmas.size else sigmas
    keep = np.isfinite(e_rho) & (e_rho <= cap)
    c = _Canvas("Position MSE against accelerometer noise density", "sigma_a (log2 axis)",
                "E_rho (m^2)", _range(lx), _range(e_rho[keep]))
    if not keep.any():
        c.note("no values below the cap")
    c.polyline(lx[keep], e_rho[keep], COLORS[0], "E_rho", marker=True)
    labels = [f"{s:.4g}" for s in sigmas]
    return c.render([("E_rho", COLORS[0])], xticks=list(lx), xtick_labels=labels)


def plot_run(directory, times, est, truth) -> list[Path]:
    """Write trajectory, altitude and yaw plots plus their data files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    est = np.asarray(est, dtype=float).reshape(-1, 11)
    truth = np.asarray(truth, dtype=float).reshape(-1, 11)
    n = min(len(est), len(truth), len(times))
    t, est, truth = np.asarray(times[:n], dtype=float), est[:n], truth[:n]
    files = []
    (d / "report.svg").write_text(trajectory_svg(est[:, :2], truth[:, :2]))
    (d / "altitude.svg").write_text(series_svg("Altitude", "z (m)", t, {"truth": truth[:, 2], "estimate": est[:, 2]}))
    (d / "yaw.svg").write_text(series_svg("Yaw", "yaw (rad)", t, {"truth": truth[:, 9], "estimate": est[:, 9]}))
    write_dat(d / "trajectory.dat", ["t", "x_est", "y_est", "z_est", "yaw_est", "x_true", "y_true", "z_true", "yaw_true"],
              [t, est[:, 0], est[:, 1], est[:, 2], est[:, 9], truth[:, 0], truth[:, 1], truth[:, 2], truth[:, 9]])
    files += [d / "report.svg", d / "altitude.svg", d / "yaw.svg", d / "trajectory.dat"]
    return files


def plot_sweep(directory, sigmas, e_rho, cap: float = 100.0) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "sweep.svg").write_text(sweep_svg(sigmas, e_rho, cap))
    write_dat(d / "sweep.dat", ["sigma_a", "log2_sigma_a", "e_rho"],
              [sigmas, np.log2(np.asarray(sigmas, dtype=float)), e_rho])
    return [d / "sweep.svg", d / "sweep.dat"]

