"""CSV schemas consumed by the figure renderers.

These mirror the column sets the sampling CLI documents for its outputs;
plotkit reads only these files and validates them before touching
matplotlib."""

import csv

KINDS = ("profile", "tau-vs-dt", "tau-min-vs-alpha", "cv-trace",
         "free-energy-snapshots", "rejection-stacked")

REQUIRED_COLUMNS = {
    "profile": {"bin_index", "z_center", "value"},
    "tau-vs-dt": {"scheme", "alpha", "dt", "tau_hat", "ci_low", "ci_high"},
    "tau-min-vs-alpha": {"scheme", "alpha", "dt", "tau_hat"},
    "cv-trace": {"iteration", "xi"},
    "free-energy-snapshots": {"iteration", "bin_index", "z_center", "value"},
    "rejection-stacked": {"scheme", "alpha", "dt", "category", "count",
                          "percent"},
}

STACK_CATEGORIES = ("fwd_momenta", "fwd_position", "bwd_momenta",
                    "bwd_position", "reversibility", "metropolis")


class SchemaError(ValueError):
    """The CSV does not carry the columns the figure kind requires."""


def read_rows(path):
    """Dictionaries per row; lines starting with '#' are metadata."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines:
        raise SchemaError(f"{path}: empty file")
    return list(csv.DictReader(lines))


def load_validated(kind, path):
    if kind not in REQUIRED_COLUMNS:
        raise SchemaError(f"unknown figure kind {kind!r}")
    rows = read_rows(path)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    missing = REQUIRED_COLUMNS[kind] - set(rows[0])
    if missing:
        raise SchemaError(f"{path}: missing columns for {kind}: "
                          f"{', '.join(sorted(missing))}")
    return rows
