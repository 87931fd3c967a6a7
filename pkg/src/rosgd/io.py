"""CSV/JSON emission with bit-faithful float formatting."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .optimizers import Trajectory

TRAJECTORY_COLUMNS = ("round", "played_loss", "step_size", "grad_norm", "iterate_norm")


def fmt(x) -> str:
    """17 significant digits; empty string for missing values."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def trajectory_rows(traj: Trajectory):
    played = traj.played_points
    norms = np.linalg.norm(played, axis=1)
    n_steps = traj.step_sizes.shape[0]
    for t in range(traj.T):
        has_step = t < n_steps
        yield (
            t + 1,
            traj.played_losses[t],
            traj.step_sizes[t] if has_step else None,
            traj.gradient_norms[t] if has_step else None,
            norms[t],
        )


def write_trajectory(traj: Trajectory, path, sidecar: dict | None = None) -> None:
    """``path`` gets the columnar CSV, ``path.with_suffix('.json')`` the sidecar."""
    path = Path(path)
    write_csv(path, TRAJECTORY_COLUMNS, trajectory_rows(traj))
    meta = {
        "algorithm": traj.algorithm,
        "T": traj.T,
        "tau": traj.tau,
        "schedule": traj.schedule.to_dict(),
        "seeds": traj.seeds,
        "flags": traj.flags,
    }
    meta.update(sidecar or {})
    write_json(path.with_suffix(".json"), meta)
