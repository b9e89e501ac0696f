"""CSV emission and parsing for every external file format.

Each file starts with one metadata comment line (configuration hash, seed
and package version) followed by a header row.  Files are written to a
temporary sibling and atomically renamed into place."""

import csv
import hashlib
import io
import os

import numpy as np

from . import __version__
from .latent import LatentGrid, Profile

PROFILE_COLUMNS = ["bin_index", "z_center", "value", "count"]
TRAJECTORY_COLUMNS = ["iteration", "xi", "V", "accepted", "bin"]
KINETIC_COLUMNS = ["iteration", "xi", "H", "cause"]
SWEEP_COLUMNS = ["scheme", "alpha", "dt", "tau_hat", "ci_low", "ci_high",
                 "n_transitions", "accept_rate", "failed"]
REJECTION_COLUMNS = ["scheme", "alpha", "dt", "category", "count", "percent"]
SNAPSHOT_COLUMNS = ["iteration", "bin_index", "z_center", "value"]


def config_hash(config_text: str) -> str:
    return hashlib.sha256(config_text.encode()).hexdigest()[:12]


def metadata_line(seed, cfg_hash: str) -> str:
    return f"# dimermc={__version__} config={cfg_hash} seed={seed}"


def write_csv(path, header, rows, seed=0, cfg_hash="unset"):
    """Atomically write one CSV file with the metadata comment line."""
    buf = io.StringIO()
    buf.write(metadata_line(seed, cfg_hash) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def read_csv(path):
    """Rows of a dimermc CSV as dictionaries; comment lines are skipped."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return list(reader)


def write_profile(path, profile: Profile, seed=0, cfg_hash="unset"):
    counts = profile.counts if profile.counts is not None \
        else np.zeros(profile.grid.n_bins, dtype=np.int64)
    rows = [(i, f"{z:.12g}", f"{v:.12g}", int(c))
            for i, (z, v, c) in enumerate(zip(profile.grid.centers,
                                              profile.values, counts))]
    write_csv(path, PROFILE_COLUMNS, rows, seed=seed, cfg_hash=cfg_hash)


def read_profile(path, outside="edge") -> Profile:
    rows = read_csv(path)
    if not rows:
        raise ValueError(f"{path}: empty profile file")
    z = np.array([float(r["z_center"]) for r in rows])
    values = np.array([float(r["value"]) for r in rows])
    counts = np.array([int(r["count"]) for r in rows], dtype=np.int64)
    if len(z) == 1:
        raise ValueError(f"{path}: need at least two bins to infer the grid")
    dz = float(np.median(np.diff(z)))
    grid = LatentGrid(z_min=float(z[0] - 0.5 * dz),
                      z_max=float(z[-1] + 0.5 * dz), n_bins=len(z))
    return Profile(grid, values, outside=outside, counts=counts)
