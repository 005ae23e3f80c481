"""Python access to the scaling_forge core.

Thin wrappers: datasets come back as numpy arrays, fits and summaries as dicts.
"""

from ._core import (
    DegenerateDataError,
    DomainError,
    FormatError,
    InvalidArgument,
    bootstrap_geomean,
    commensurate_angle,
    fit_log_linear,
    fit_power_law,
    generate_dataset,
    ground_state,
    ingest,
    param_count,
    read_dataset,
    report,
    run_grid,
    sites_per_layer,
    summarize,
)

__all__ = [
    "DegenerateDataError",
    "DomainError",
    "FormatError",
    "InvalidArgument",
    "bootstrap_geomean",
    "commensurate_angle",
    "fit_log_linear",
    "fit_power_law",
    "generate_dataset",
    "ground_state",
    "ingest",
    "param_count",
    "read_dataset",
    "report",
    "run_grid",
    "sites_per_layer",
    "summarize",
]
