import csv
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from ensemblemoments.core.ensemble import ControlSequence, MemberTrajectory
from ensemblemoments.core.moments import MomentTrajectory
from ensemblemoments.core.utils import format_float


def _format(value):
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(_format(v) for v in value)
    return value


def write_rows_csv(path, fieldnames: Sequence[str], rows: List[Dict]):
    """Write dict rows with floats formatted to twelve significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _format(value) for key, value in row.items()})
    return path


def write_member_trajectories_csv(path, trajectories: List[MemberTrajectory]):
    """Columns t, beta, px, py, theta. Rows are grouped by member in grid order."""
    rows = []
    for trajectory in trajectories:
        headings = trajectory.headings()
        for t, state, theta in zip(trajectory.times, trajectory.states, headings):
            rows.append(
                {
                    "t": t,
                    "beta": trajectory.beta,
                    "px": state[0],
                    "py": state[1],
                    "theta": theta,
                }
            )
    return write_rows_csv(path, ["t", "beta", "px", "py", "theta"], rows)


def write_moment_trajectory_csv(path, trajectory: MomentTrajectory):
    rows = []
    for t, blocks in zip(trajectory.times, trajectory.array):
        for k, block in enumerate(blocks):
            rows.append(
                {
                    "t": t,
                    "k": k,
                    "m_px": block[0],
                    "m_py": block[1],
                    "m_c": block[2],
                    "m_s": block[3],
                }
            )
    return write_rows_csv(path, ["t", "k", "m_px", "m_py", "m_c", "m_s"], rows)


def write_controls_csv(path, controls: ControlSequence):
    rows = [
        {
            "t_start": step * controls.dt,
            "t_end": (step + 1) * controls.dt,
            "v": v,
            "omega": omega,
        }
        for step, (v, omega) in enumerate(controls.pairs)
    ]
    return write_rows_csv(path, ["t_start", "t_end", "v", "omega"], rows)


def read_controls_csv(path) -> ControlSequence:
    """
    Load a control file written by write_controls_csv. The step is the whole span divided
    by the number of rows, which keeps it accurate beyond the printed digits of one row.
    """
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError("{} contains no control steps".format(path))
    missing = {"t_start", "t_end", "v", "omega"} - set(rows[0].keys())
    if missing:
        raise ValueError("{} is missing the columns {}".format(path, sorted(missing)))
    dt = (float(rows[-1]["t_end"]) - float(rows[0]["t_start"])) / len(rows)
    pairs = [(float(row["v"]), float(row["omega"])) for row in rows]
    return ControlSequence(dt, pairs)


def read_member_trajectories_csv(path) -> List[MemberTrajectory]:
    """Load a rollout written by write_member_trajectories_csv."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    members = {}
    for row in rows:
        members.setdefault(row["beta"], []).append(
            [float(row[key]) for key in ("t", "px", "py", "theta")]
        )
    trajectories = []
    for beta, values in members.items():
        values = np.array(values)
        dt = values[1, 0] - values[0, 0] if len(values) > 1 else 1.0
        states = np.column_stack(
            [values[:, 1], values[:, 2], np.cos(values[:, 3]), np.sin(values[:, 3])]
        )
        trajectories.append(MemberTrajectory(float(beta), dt, states))
    return trajectories
