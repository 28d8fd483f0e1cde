"""Command line for simulating datasets, running the filter and plotting results.

Subcommands: simulate, run, sweep, eval, plot, validate. Any configuration
key can be given as ``--key=value`` after the positional arguments; values
from ``--config FILE`` are applied first.

Exit codes: 0 success, 2 divergence, 3 configuration error, 4 dataset error.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from fieldekf.dataset import DatasetWarning, ingest
from fieldekf.errors import ConfigError, DatasetError
from fieldekf.harness import plot as plots
from fieldekf.harness.config import RunConfig, load_config, parse_overrides
from fieldekf.harness.metrics import MetricsReport, align, position_errors, write_metrics, yaw_errors
from fieldekf.harness.runner import read_estimates, run_dataset, write_run
from fieldekf.harness.sweep import read_sweep, sweep, write_sweep
from fieldekf.simulator import SimConfig, simulate_to

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG, EXIT_DATASET = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fieldekf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("output", help="dataset directory to create")

    for name, text in (("run", "run the filter over a dataset"),
                       ("sweep", "run once per accelerometer noise density"),
                       ("validate", "check the integrability and invertibility conditions on frame 0")):
        c = sub.add_parser(name, help=text)
        c.add_argument("dataset")

    e = sub.add_parser("eval", help="recompute metrics from an estimates.csv")
    e.add_argument("estimates")
    e.add_argument("dataset")

    g = sub.add_parser("plot", help="render SVG plots from a run or sweep output directory")
    g.add_argument("results", help="directory holding estimates.csv or sweep.csv")
    g.add_argument("--dataset", dest="plot_dataset", default=None, help="dataset for the truth overlay")

    for c in sub.choices.values():
        c.add_argument("--config", default=None, help="key = value configuration file")
    return p


def _out(cfg: RunConfig) -> Path:
    d = Path(cfg.output)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _open(path: str):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DatasetWarning)
        ds = ingest(path)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return ds


def cmd_simulate(args, overrides) -> int:
    cfg = load_config(args.config, overrides, cls=SimConfig)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DatasetWarning)
        try:
            ds = simulate_to(args.output, cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"wrote {len(ds)} frames to {args.output}")
    return EXIT_OK


def cmd_run(args, overrides) -> int:
    cfg = load_config(args.config, {"dataset": args.dataset, **overrides})
    ds = _open(cfg.dataset)
    result = run_dataset(ds, cfg)
    out = _out(cfg)
    write_run(out, result)
    plots.plot_run(out, result.times, result.estimates, ds.truth)
    rep = result.report
    t = rep.timing()
    print(f"E_rho = {rep.e_rho:.6g} m^2, E_theta = {rep.e_theta:.6g} rad^2, "
          f"median step {t['median_ms']:.2f} ms (budget {rep.budget_ms:.1f} ms)")
    if result.stale_frames:
        print(f"warning: no IMU samples for frames {result.stale_frames[:20]}", file=sys.stderr)
    if rep.diverged:
        print(f"diverged at step {rep.divergence_step}: {rep.divergence_reason}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_sweep(args, overrides) -> int:
    cfg = load_config(args.config, {"dataset": args.dataset, **overrides})
    _open(cfg.dataset)  # validate once before fanning out
    rows = sweep(cfg.dataset, cfg)
    out = _out(cfg)
    write_sweep(out / "sweep.csv", rows)
    plots.plot_sweep(out, [r.sigma_a for r in rows], [r.report.e_rho for r in rows], cfg.sweep_cap)
    for r in rows:
        flag = " (above cap)" if r.over_cap else ""
        print(f"sigma_a = {r.sigma_a:<8.4g} E_rho = {r.report.e_rho:.6g}{flag}")
    return EXIT_OK


def cmd_eval(args, overrides) -> int:
    cfg = load_config(args.config, {"dataset": args.dataset, **overrides})
    ds = _open(cfg.dataset)
    try:
        cols = read_estimates(args.estimates)
    except (OSError, ValueError) as exc:
        raise DatasetError(str(exc)) from None
    t = cols["t"]
    est = np.column_stack([cols[c] for c in ("x", "y", "z")])
    dt = cfg.dt if cfg.dt > 0 else ds.dt
    keep = t >= ds.times[0] + cfg.warmup
    ei, ti = align(t[keep], ds.times, 0.5 * dt)
    ei = np.flatnonzero(keep)[ei]
    if ei.size == 0:
        raise DatasetError(f"{args.estimates}: no estimate lies within dt/2 of a truth timestamp")
    pe = position_errors(est[ei], ds.truth[ti, :3])
    ye = yaw_errors(cols["yaw"][ei], ds.truth[ti, 9])
    rep = MetricsReport(float(pe.mean()), float(ye.mean()), pe, ye, t[ei], len(t),
                        budget_ms=cfg.budget_ms, sigma_a=cfg.sigma_a)
    write_metrics(_out(cfg) / "metrics.csv", rep)
    print(f"E_rho = {rep.e_rho:.6g} m^2, E_theta = {rep.e_theta:.6g} rad^2 over {ei.size} aligned samples")
    return EXIT_OK


def cmd_plot(args, overrides) -> int:
    cfg = load_config(args.config, overrides)
    res = Path(args.results)
    made = []
    if (res / "sweep.csv").is_file():
        sw = read_sweep(res / "sweep.csv")
        made += plots.plot_sweep(res, sw["sigma_a"], sw["e_rho"], cfg.sweep_cap)
    if (res / "estimates.csv").is_file():
        cols = read_estimates(res / "estimates.csv")
        est = np.column_stack([cols[c] for c in ("x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "yaw", "r")])
        source = args.plot_dataset or cfg.dataset
        truth = _open(source).truth if source else np.full_like(est, np.nan)
        made += plots.plot_run(res, cols["t"], est, truth)
    if not made:
        raise DatasetError(f"{res}: neither estimates.csv nor sweep.csv found")
    for f in made:
        print(f)
    return EXIT_OK


def cmd_validate(args, overrides) -> int:
    from fieldekf.drone import NoiseDensities, build_Q
    from fieldekf.harness.runner import measurement_model, noise_from_config
    from fieldekf.spectral import validate_assumptions

    cfg = load_config(args.config, {"dataset": args.dataset, **overrides})
    ds = _open(cfg.dataset)
    model = measurement_model(ds, cfg)
    _, G = model.evaluate(ds.truth[0])
    Q = build_Q(NoiseDensities(cfg.sigma_a, cfg.g_a, cfg.sigma_b, cfg.g_b), cfg.dt if cfg.dt > 0 else ds.dt)
    report = validate_assumptions(G, noise_from_config(cfg), G.grid, P=Q)
    text = report.format()
    (_out(cfg) / "assumptions.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "run": cmd_run, "sweep": cmd_sweep,
    "eval": cmd_eval, "plot": cmd_plot, "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = _parser()
    args, rest = parser.parse_known_args(argv)
    try:
        overrides = parse_overrides(rest)
        return COMMANDS[args.command](args, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print("dataset error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_DATASET


if __name__ == "__main__":
    sys.exit(main())
