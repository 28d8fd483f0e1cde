"""Command-line pipeline: ingestion, filter runs, metrics, sweeps and plots."""
