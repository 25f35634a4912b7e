"""CSV emission with lossless float formatting, and the trajectory reader."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

__all__ = ["fmt", "write_table", "write_trajectory", "read_trajectory", "write_matrix"]

SIDES = ("cont", "left", "right")


def fmt(x) -> str:
    """17 significant digits for floats; everything else via ``str``."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_table(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def write_trajectory(path, traj, prefix="x") -> Path:
    """Header ``t,side,x0,...``; both one-sided limits are written at impulse times."""
    header = ["t", "side"] + [f"{prefix}{i}" for i in range(traj.dim)]
    return write_table(path, header, ([t, side, *x] for t, side, x in traj.rows()))


def read_trajectory(path):
    """Return ``(times, sides, states)`` from a trajectory CSV."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0][:2] != ["t", "side"] or len(rows) < 3:
        raise ConfigError(f"{path} is not a trajectory file")
    try:
        t = np.array([float(r[0]) for r in rows[1:]])
        X = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed row ({exc})") from exc
    sides = [r[1] for r in rows[1:]]
    if any(s not in SIDES for s in sides):
        raise ConfigError(f"{path}: side must be one of {SIDES}")
    return t, sides, X


def write_matrix(path, M, prefix="c") -> Path:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return write_table(path, [f"{prefix}{j}" for j in range(M.shape[1])], M.tolist())
