"""CSV and JSON writers for run artifacts.

Floats are written with Python's shortest round-trip ``repr`` so files parse
back bit-exactly; JSON keys are sorted.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Union

import numpy as np

from pricedyn.discrete import DiscreteTrajectory
from pricedyn.dynamics import Trajectory

ENERGY_COLUMNS = ("energy", "kinetic", "potential", "dissipation_rate", "injection_rate")


def trajectory_header(n: int, with_L: bool) -> list:
    cols = ["t"] + [f"p{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)] + list(ENERGY_COLUMNS)
    if with_L:
        cols.append("L")
    return cols


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _continuous_rows(traj: Trajectory):
    with_L = traj.dim == 2 and traj.p_hat is not None
    header = trajectory_header(traj.dim, with_L)
    p = traj.p
    energy = traj.energy
    if with_L:
        q = traj.q
        L = q[:, 1] * traj.v[:, 0] - q[:, 0] * traj.v[:, 1]
    rows = []
    for i in range(len(traj)):
        row = [traj.t[i], *p[i], *traj.v[i], energy[i], traj.kinetic[i], traj.potential[i],
               traj.dissipation_rate[i], traj.injection_rate[i]]
        if with_L:
            row.append(L[i])
        rows.append(row)
    return header, rows


def _discrete_rows(traj: DiscreteTrajectory, model):
    """Discrete maps have no damping matrix; dissipation is reported as 0 and kappa as 1."""
    n = traj.p.shape[1]
    header = trajectory_header(n, False)
    rows = []
    for t, p, dp in zip(traj.t, traj.p, traj.dp):
        kinetic = 0.5 * float(dp @ dp)
        potential = float(model.potential(p))
        injection = float(dp @ np.asarray(model.solenoidal(p), dtype=float))
        rows.append([int(t), *p, *dp, kinetic + potential, kinetic, potential, 0.0, injection])
    return header, rows


def trajectory_csv(traj: Union[Trajectory, DiscreteTrajectory], model=None) -> str:
    if isinstance(traj, DiscreteTrajectory):
        header, rows = _discrete_rows(traj, model)
    else:
        header, rows = _continuous_rows(traj)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def summary_json(summary: dict) -> str:
    return json.dumps(summary, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_text(path: Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def read_trajectory_csv(path: Union[str, Path]) -> dict:
    """Parse a trajectory CSV into ``{column: ndarray}``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(x) for x in row] for row in reader])
    return {name: data[:, i] for i, name in enumerate(header)}
