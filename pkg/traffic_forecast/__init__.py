"""Time-varying Poisson forecasting of web-server traffic."""

__all__ = [
    "cli",
    "config",
    "estimation",
    "evaluation",
    "export",
    "ingest",
    "metrics",
    "model_core",
    "safety",
    "samplers",
    "schema",
    "simulate",
]
