"""CSV and JSON artifacts.

Floats are written with 17 significant digits so that parsing gives back the
same doubles. Every CSV starts with a ``# config_hash=<sha256>`` line.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import ParseError

TRAJECTORY_COLUMNS = ("k", "agent", "axis", "x", "v", "e", "p", "b")
ANALYSIS_COLUMNS = ("section", "index", "k", "quantity", "value")


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return f"{float(value):.17g}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], config_hash: str = ""):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def read_csv(path: Path) -> tuple[str, list[str], list[list[str]]]:
    """Returns ``(config_hash, header, rows)``."""
    with Path(path).open(newline="") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith("# config_hash="):
            raise ParseError("missing config_hash header", f"{path}:1")
        reader = csv.reader(fh)
        header = next(reader)
        return first.split("=", 1)[1], header, list(reader)


def write_trajectory(path: Path, traj) -> None:
    K1, n, r = traj.x.shape

    def rows():
        for k in range(K1):
            for i in range(n):
                for a in range(r):
                    yield (k, i, a, traj.x[k, i, a], traj.v[k, i, a],
                           traj.e[k, i], traj.p[k, i], traj.b[k, i])

    write_csv(path, TRAJECTORY_COLUMNS, rows(), traj.config_hash)


@dataclass
class TrajectoryRecord:
    config_hash: str
    x: NDArray
    v: NDArray
    e: NDArray
    p: NDArray
    b: NDArray


def read_trajectory(path: Path) -> TrajectoryRecord:
    h, header, rows = read_csv(path)
    if tuple(header) != TRAJECTORY_COLUMNS:
        raise ParseError(f"unexpected columns {header}", f"{path}:2")
    if not rows:
        raise ParseError("no data rows", str(path))
    idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
    vals = np.array([[float(c) for c in r[3:]] for r in rows])
    K1, n, r = idx.max(axis=0) + 1
    x = np.full((K1, n, r), np.nan)
    v = np.full((K1, n, r), np.nan)
    agent = np.full((K1, n, 3), np.nan)
    x[idx[:, 0], idx[:, 1], idx[:, 2]] = vals[:, 0]
    v[idx[:, 0], idx[:, 1], idx[:, 2]] = vals[:, 1]
    agent[idx[:, 0], idx[:, 1]] = vals[:, 2:]
    return TrajectoryRecord(h, x, v, agent[..., 0], agent[..., 1], agent[..., 2])


def write_json(path: Path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_plotdata(out_dir: Path, traj) -> None:
    """Data-only plot series: positions, diameter and log10 diameter against k."""
    out_dir = Path(out_dir)
    K1, n, r = traj.x.shape
    cols = ["k"] + [f"x_{i}_{a}" for i in range(n) for a in range(r)]
    write_csv(out_dir / "positions.csv", cols,
              ([k, *traj.x[k].ravel()] for k in range(K1)), traj.config_hash)
    with np.errstate(divide="ignore"):
        logd = np.log10(traj.diameter)
    write_csv(out_dir / "diameter.csv", ["k", "diameter", "log10_diameter"],
              ([k, traj.diameter[k], logd[k] if np.isfinite(logd[k]) else "-inf"]
               for k in range(K1)), traj.config_hash)
