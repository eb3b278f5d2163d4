"""CSV and JSON artifacts.

Numbers are written with 17 significant digits so that every double survives
a write/read cycle unchanged. CSV files may start with ``#`` comment lines
holding ``key=value`` metadata.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .simulate import FROZEN_THRESHOLD, ConvergenceTable, PhysicalTrajectory, Trajectory

__all__ = [
    "fmt",
    "read_convergence_csv",
    "read_physical_csv",
    "read_trajectory_csv",
    "to_jsonable",
    "write_convergence_csv",
    "write_json",
    "write_ocp_csv",
    "write_physical_csv",
    "write_trajectory_csv",
]


def fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def _write(path, header: list, rows: Iterable, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([x if isinstance(x, str) else fmt(x) for x in row])
    return path


def _read(path) -> tuple:
    meta = {}
    lines = []
    with Path(path).open(newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
            else:
                lines.append(line)
    rd = csv.reader(lines)
    header = next(rd)
    rows = [r for r in rd if r]
    return header, rows, meta


def _state_names(n: int) -> list:
    return [f"x{i}" for i in range(n)]


def frozen_flags(traj: Trajectory, theta: float = FROZEN_THRESHOLD) -> np.ndarray:
    """Per sample: True when the step leading into it left the clock (almost) still."""
    inc = np.diff(traj.clock)
    flags = np.zeros(len(traj.clock), dtype=bool)
    flags[1:] = inc < theta * traj.h
    if inc.size:
        flags[0] = inc[0] < theta * traj.h
    return flags


def write_trajectory_csv(path, traj: Trajectory, theta: float = FROZEN_THRESHOLD) -> Path:
    """Columns tau, t, x..., frozen and, for controlled runs, the control of the step
    leaving each sample (nan on the last row)."""
    n_x = traj.states.shape[1] - 1
    n_u = 0 if traj.controls is None else traj.controls.shape[1]
    header = ["tau", "t"] + _state_names(n_x) + ["frozen"] + [f"u{i}" for i in range(n_u)]
    flags = frozen_flags(traj, theta)

    def rows():
        for k in range(len(traj.tau_grid)):
            row = [traj.tau_grid[k], traj.states[k, -1], *traj.states[k, :-1], int(flags[k])]
            if n_u:
                row += list(traj.controls[k]) if k < len(traj.controls) else [math.nan] * n_u
            yield row

    return _write(path, header, rows(), {"scheme": traj.scheme, "h": fmt(traj.h)})


def read_trajectory_csv(path) -> Trajectory:
    header, rows, meta = _read(path)
    data = np.array([[float(v) for v in r] for r in rows])
    n_x = sum(1 for h in header if h.startswith("x"))
    tau = data[:, 0]
    states = np.column_stack([data[:, 2:2 + n_x], data[:, 1]])
    n_u = sum(1 for h in header if h.startswith("u"))
    controls = data[:-1, 3 + n_x:3 + n_x + n_u].copy() if n_u else None
    return Trajectory(tau, states, meta.get("scheme", "unknown"), float(meta.get("h", "nan")), controls)


def write_physical_csv(path, phys: PhysicalTrajectory) -> Path:
    """One row per pseudo-time sample; dropped samples carry nan values and frozen=1."""
    n_x = phys.states.shape[1]
    header = ["tau", "t"] + _state_names(n_x) + ["frozen"]
    keep = np.flatnonzero(~phys.frozen_mask)

    def rows():
        j = 0
        for k in range(len(phys.frozen_mask)):
            if phys.frozen_mask[k]:
                yield [math.nan, math.nan] + [math.nan] * n_x + [1]
            else:
                yield [phys.tau_grid[j], phys.t_grid[j], *phys.states[j], 0]
                j += 1
        assert j == keep.size

    return _write(path, header, rows())


def read_physical_csv(path) -> PhysicalTrajectory:
    header, rows, _ = _read(path)
    data = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), len(header))
    frozen = data[:, -1].astype(bool)
    kept = data[~frozen]
    return PhysicalTrajectory(kept[:, 1].copy(), kept[:, 2:-1].copy(), frozen, kept[:, 0].copy())


def write_convergence_csv(path, table: ConvergenceTable) -> Path:
    rows = ((s, M, h, E, table.orders.get(s, math.nan)) for s, M, h, E in table.rows)
    return _write(path, ["scheme", "M", "h", "E", "fitted_order"],
                  ([s, fmt(int(M)), h, E, p] for s, M, h, E, p in rows))


def read_convergence_csv(path) -> ConvergenceTable:
    _, rows, _ = _read(path)
    table = ConvergenceTable()
    for s, M, h, E, p in rows:
        table.rows.append((s, int(float(M)), float(h), float(E)))
        table.orders[s] = float(p)
    return table


def write_ocp_csv(path, nlp, x) -> Path:
    """Per node: s, clock, states, (alpha, lambda0, lambda1) per constraint, and the
    control of the element starting at the node (nan on the last node)."""
    parts = nlp.unpack(x)
    Y, ALG, U = parts["Y"], parts["ALG"], parts["U"]
    n_x = nlp.n_x
    header = ["s", "tau", "t"] + _state_names(n_x)
    for i in range(nlp.n_c):
        header += [f"alpha{i}", f"lambda0_{i}", f"lambda1_{i}"]
    header += [f"u{j}" for j in range(nlp.n_u)]
    w = parts["w"]

    def rows():
        for n in range(nlp.N + 1):
            s = n * nlp.h
            row = [s, s * w, Y[n, -1], *Y[n, :n_x], *ALG[n].ravel()]
            if nlp.n_u:
                row += list(U[nlp.control_index(n)]) if n < nlp.N else [math.nan] * nlp.n_u
            yield row

    return _write(path, header, rows(), {"w": fmt(w), "N": nlp.N, "N_ctrl": nlp.N_ctrl})


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, data: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path
