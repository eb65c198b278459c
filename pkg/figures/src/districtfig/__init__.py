from .plotting import (
    EXPECTED_HEADER,
    METRIC_COLUMNS,
    RunsTableError,
    load_runs,
    normalized_histogram,
    plot_distributions,
)

__all__ = [
    "EXPECTED_HEADER",
    "METRIC_COLUMNS",
    "RunsTableError",
    "load_runs",
    "normalized_histogram",
    "plot_distributions",
]

__version__ = "0.1.0"
