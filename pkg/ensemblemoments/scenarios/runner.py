import json
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from ensemblemoments.core.ensemble import (
    ControlSequence,
    ensemble_states,
    rollout_ensemble,
)
from ensemblemoments.core.io_utils import (
    read_controls_csv,
    write_controls_csv,
    write_member_trajectories_csv,
    write_moment_trajectory_csv,
    write_rows_csv,
)
from ensemblemoments.core.moments import integrate_moments, transform_trajectories
from ensemblemoments.optimization.ocp import OcpSpec
from ensemblemoments.optimization.receding_horizon import (
    broadcast_open_loop,
    receding_horizon_run,
)
from ensemblemoments.optimization.solver import initial_guess
from ensemblemoments.optimization.verification import verify_rollout
from ensemblemoments.optimization.visit_avoid import solve_spec
from ensemblemoments.scenarios.plotting import render_svg
from ensemblemoments.scenarios.scenario import ScenarioFile

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_PARSE_ERROR = 2
EXIT_VERIFICATION_FAILED = 3

BAND_COLUMNS = ["kind", "name", "order", "row_x", "row_y", "lo", "hi"]


class RunArtifacts:
    """Where a run put its outputs, its summary and the process exit code it maps to."""

    def __init__(self, out_dir: Path, mode: str, exit_code: int, summary: dict):
        self.out_dir = Path(out_dir)
        self.mode = mode
        self.exit_code = exit_code
        self.summary = summary
        self.report_path = self.out_dir / "report.json"
        self.resolved_config_path = self.out_dir / "resolved_config.json"
        self.csv_paths: List[Path] = []
        self.svg_paths: List[Path] = []

    def to_dict(self):
        return {
            "mode": self.mode,
            "exit_code": self.exit_code,
            "report": str(self.report_path),
            "resolved_config": str(self.resolved_config_path),
            "csv": [str(p) for p in self.csv_paths],
            "svg": [str(p) for p in self.svg_paths],
        }


def _to_builtin(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError("{!r} is not JSON serializable".format(value))


def write_json(path, document):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(document, f, indent=2, default=_to_builtin)
        f.write("\n")
    return path


def band_rows(spec: OcpSpec):
    """One row per moment band and per obstacle facet, as written to bands.csv."""
    rows = []
    for band in spec.constraints.bands:
        rows.append(
            {
                "kind": "band",
                "name": band.name,
                "order": band.order,
                "row_x": float(band.row[0]),
                "row_y": float(band.row[1]),
                "lo": float(band.lo),
                "hi": float(band.hi),
            }
        )
    for disjunction in spec.constraints.disjunctions:
        for row, lo, hi in zip(disjunction.rows, disjunction.lo, disjunction.hi):
            rows.append(
                {
                    "kind": "disjunction",
                    "name": disjunction.name,
                    "order": 0,
                    "row_x": float(row[0]),
                    "row_y": float(row[1]),
                    "lo": float(lo),
                    "hi": float(hi),
                }
            )
    return rows


def exit_code(converged: bool, verification: Optional[dict]) -> int:
    """Map a run outcome to the process exit code; non-convergence takes precedence."""
    if not converged:
        return EXIT_NOT_CONVERGED
    if verification is not None and not verification["passed"]:
        return EXIT_VERIFICATION_FAILED
    return EXIT_OK


def stored_controls(path, spec: OcpSpec) -> ControlSequence:
    """
    Read a controls file. A file with one row per knot whose step matches the knot step up to
    the printed digits is put back on the exact knot grid.
    """
    controls = read_controls_csv(path)
    close = abs(controls.dt - spec.knot_dt) <= 1e-9 * spec.knot_dt
    if controls.num_steps == spec.knots and close:
        return ControlSequence(spec.knot_dt, controls.pairs)
    return controls


def _controls(scenario: ScenarioFile, spec: OcpSpec) -> ControlSequence:
    """The scenario's stored controls, else the straight-line initial guess."""
    path = scenario.resolve_path(scenario.run["controls"])
    if path is not None:
        return stored_controls(path, spec)
    return initial_guess(spec).control_sequence(spec.knot_dt)


class _Writer:
    def __init__(self, scenario: ScenarioFile, artifacts: RunArtifacts):
        self.scenario = scenario
        self.artifacts = artifacts

    def csv(self, path):
        self.artifacts.csv_paths.append(path)

    def rollout(self, trajectories, filename="rollout.csv"):
        self.csv(write_member_trajectories_csv(self.artifacts.out_dir / filename, trajectories))

    def controls(self, controls):
        self.csv(write_controls_csv(self.artifacts.out_dir / "controls.csv", controls))

    def moments(self, trajectory, filename="moments.csv"):
        self.csv(write_moment_trajectory_csv(self.artifacts.out_dir / filename, trajectory))

    def plot(self, trajectories, title):
        scenario = self.scenario
        path = self.artifacts.out_dir / "plot.svg"
        render_svg(
            trajectories,
            constraints=scenario.regions + scenario.obstacles,
            waypoints=[poly for poly, _ in scenario.waypoints.values()],
            start=scenario.start[:2],
            goal=scenario.target,
            title=title,
            path=path,
        )
        self.artifacts.svg_paths.append(path)


def _run_transform(scenario, spec, writer):
    grid = scenario.grid()
    controls = _controls(scenario, spec).expand(spec.dt)
    trajectories = rollout_ensemble(grid, spec.start, controls)
    sampled = transform_trajectories(grid, trajectories, spec.order)
    integrated = integrate_moments(spec.initial, controls, method=scenario.run["integrator"])
    writer.rollout(trajectories)
    writer.moments(integrated)
    writer.moments(sampled, "transformed.csv")
    bands_path = writer.artifacts.out_dir / "bands.csv"
    writer.csv(write_rows_csv(bands_path, BAND_COLUMNS, band_rows(spec)))
    error = float(np.max(np.abs(integrated.array - sampled.array)))
    return EXIT_OK, {
        "order": spec.order,
        "integrator": scenario.run["integrator"],
        "num_members": len(grid),
        "commuting_error": error,
        "num_bands": len(spec.constraints.bands),
        "num_disjunctions": len(spec.constraints.disjunctions),
    }


def _run_simulate(scenario, spec, writer):
    grid = scenario.grid()
    controls = _controls(scenario, spec)
    trajectories = rollout_ensemble(grid, spec.start, controls.expand(spec.dt))
    verification = verify_rollout(
        spec, controls, grid, scenario.run["verify_tolerance"], trajectories=trajectories
    )
    writer.controls(controls)
    writer.rollout(trajectories)
    writer.plot(trajectories, "{} (simulate)".format(scenario.name))
    return exit_code(True, verification), {"verification": verification}


def _run_solve(scenario, spec, writer):
    grid = scenario.grid()
    big_m_ok = scenario.check_big_m()
    report = solve_spec(spec, scenario.solver_options(), grid=grid)
    trajectories = rollout_ensemble(grid, spec.start, report.controls.expand(spec.dt))
    writer.controls(report.controls)
    writer.moments(report.trajectory)
    writer.rollout(trajectories)
    writer.plot(trajectories, "{} (solve)".format(scenario.name))
    code = exit_code(report.converged, report.verification)
    return code, dict(report.to_dict(), big_m_ok=big_m_ok)


def _run_verify(scenario, spec, writer):
    grid = scenario.grid()
    controls = stored_controls(scenario.resolve_path(scenario.run["controls"]), spec)
    trajectories = rollout_ensemble(grid, spec.start, controls.expand(spec.dt))
    verification = verify_rollout(
        spec, controls, grid, scenario.run["verify_tolerance"], trajectories=trajectories
    )
    writer.rollout(trajectories)
    writer.plot(trajectories, "{} (verify)".format(scenario.name))
    return exit_code(True, verification), {"verification": verification}


def _run_receding(scenario, spec, writer, progress):
    plant = scenario.plant()
    result = receding_horizon_run(
        spec,
        plant,
        replan_every=scenario.run["replan_every"],
        apply=scenario.run["apply"],
        options=scenario.solver_options(),
        progress=progress,
    )
    open_loop = broadcast_open_loop(spec, result.reports[0].controls, plant)
    open_loop_mean = ensemble_states(open_loop)[-1, :, :2].mean(axis=0)
    verification = verify_rollout(
        spec,
        result.applied,
        plant,
        scenario.run["verify_tolerance"],
        trajectories=result.trajectories,
    )
    writer.controls(result.applied)
    writer.rollout(result.trajectories)
    writer.rollout(open_loop, "open_loop.csv")
    writer.plot(result.trajectories, "{} (receding)".format(scenario.name))
    summary = result.to_dict()
    summary["open_loop_terminal_mean_position"] = open_loop_mean.tolist()
    summary["open_loop_terminal_error"] = float(np.linalg.norm(open_loop_mean - spec.target))
    summary["verification"] = verification
    return exit_code(result.converged, verification), summary


def run(
    scenario: ScenarioFile, out_dir=None, progress: bool = True
) -> RunArtifacts:
    """
    Execute the scenario's run.mode and write its artifacts into out_dir (default run.out):
    report.json and resolved_config.json always, plus the mode's CSV files and plot.svg.

    Exit codes (see exit_code): 0 feasible and verified, 1 not converged, 3 the rollout
    violates the constraints beyond run.verify_tolerance. Every mode that rolls controls out
    on the members verifies them.
    """
    out_dir = Path(out_dir if out_dir is not None else scenario.run["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = scenario.mode
    artifacts = RunArtifacts(out_dir, mode, EXIT_OK, {})
    resolved = scenario.to_dict()
    resolved["run"]["out"] = str(out_dir)
    write_json(artifacts.resolved_config_path, resolved)

    spec = scenario.build_spec()
    writer = _Writer(scenario, artifacts)
    if mode == "transform":
        code, summary = _run_transform(scenario, spec, writer)
    elif mode == "simulate":
        code, summary = _run_simulate(scenario, spec, writer)
    elif mode == "solve":
        code, summary = _run_solve(scenario, spec, writer)
    elif mode == "verify":
        code, summary = _run_verify(scenario, spec, writer)
    else:
        code, summary = _run_receding(scenario, spec, writer, progress)

    summary = dict(summary, name=scenario.name, mode=mode, exit_code=code)
    artifacts.exit_code = code
    artifacts.summary = summary
    write_json(artifacts.report_path, summary)
    return artifacts


def summary_line(artifacts: RunArtifacts) -> Optional[str]:
    """A one-line human-readable status of a finished run."""
    summary = artifacts.summary
    parts = ["{}: mode={} exit={}".format(summary["name"], artifacts.mode, artifacts.exit_code)]
    if "message" in summary:
        parts.append(summary["message"])
    verification = summary.get("verification")
    if verification:
        parts.append(
            "max member violation {:.4g} (tolerance {:.4g})".format(
                verification["max_member_violation"], verification["tolerance"]
            )
        )
    if "commuting_error" in summary:
        parts.append("commuting error {:.3g}".format(summary["commuting_error"]))
    if "open_loop_terminal_error" in summary:
        parts.append(
            "terminal error closed loop {:.4g}, open loop {:.4g}".format(
                summary["terminal_error"], summary["open_loop_terminal_error"]
            )
        )
    return ", ".join(parts)


def load_expected(scenario_path) -> Optional[dict]:
    """The outcome stored next to a scenario as <name>.expected, if there is one."""
    path = Path(scenario_path).with_suffix(".expected")
    if not path.exists():
        return None
    with open(path, "r") as f:
        return yaml.safe_load(f)


def check_expected(summary: dict, expected: dict) -> List[str]:
    """
    Compare a solve summary with an expected outcome. `converged` must match, the
    verification's max_member_violation and the terminal_mean_error must not exceed their
    bounds and the robustness must reach min_robustness.

    :return: One message per mismatch; empty when everything holds
    """
    problems = []
    if "converged" in expected and summary.get("converged") != expected["converged"]:
        problems.append(
            "converged is {}, expected {}".format(summary.get("converged"), expected["converged"])
        )
    verification = summary.get("verification") or {}
    upper_bounds = (
        ("max_member_violation", verification.get("max_member_violation")),
        ("terminal_mean_error", summary.get("terminal_mean_error")),
    )
    for key, value in upper_bounds:
        if key in expected and (value is None or value > expected[key]):
            problems.append("{} is {}, expected at most {}".format(key, value, expected[key]))
    if "min_robustness" in expected:
        robustness = summary.get("robustness")
        if robustness is None or robustness < expected["min_robustness"]:
            problems.append(
                "robustness is {}, expected at least {}".format(
                    robustness, expected["min_robustness"]
                )
            )
    return problems
