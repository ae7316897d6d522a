import argparse
import sys
from pathlib import Path
from typing import List, Optional

from ensemblemoments import __version__
from ensemblemoments.core.exceptions import ScenarioValidationError
from ensemblemoments.core.io_utils import read_member_trajectories_csv, write_rows_csv
from ensemblemoments.core.legendre import OrthonormalBasis
from ensemblemoments.scenarios.plotting import render_svg
from ensemblemoments.scenarios.runner import (
    EXIT_OK,
    EXIT_PARSE_ERROR,
    run,
    summary_line,
)
from ensemblemoments.scenarios.scenario import parse_scenario

RUN_COMMANDS = ("transform", "simulate", "solve", "verify", "receding")
BASIS_COLUMNS = ["k", "a_k", "c_k", "m_plus", "m_minus", "roots"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensemblemoments",
        description="Moment-space control of unicycle ensembles with uncertain traction.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    basis = commands.add_parser("basis", help="Print the Legendre basis table")
    basis.add_argument("--order", type=int, default=8, help="Highest basis degree N")
    basis.add_argument("--out", help="Directory for basis.csv")

    for name in RUN_COMMANDS:
        command = commands.add_parser(name, help="Run a scenario in {} mode".format(name))
        command.add_argument("--scenario", required=True, help="Scenario file path")
        command.add_argument("--out", help="Output directory, overrides run.out")
        command.add_argument("--seed", type=int, help="Overrides run.seed")
        command.add_argument("--grid", type=int, help="Overrides run.grid")
        if name in ("transform", "simulate", "verify"):
            command.add_argument("--controls", help="Controls CSV, overrides run.controls")
        if name == "solve":
            command.add_argument(
                "--no-obstacles",
                action="store_true",
                help="Leave the obstacles out of the problem",
            )
        if name == "receding":
            command.add_argument("--no-progress", action="store_true")

    plot = commands.add_parser("plot", help="Render a stored rollout as SVG")
    plot.add_argument("--scenario", required=True, help="Scenario file path")
    plot.add_argument("--rollout", required=True, help="rollout.csv of an earlier run")
    plot.add_argument("--out", help="Output directory for plot.svg")
    return parser


def _basis(args) -> int:
    if args.order < 0:
        sys.stderr.write("[basis] --order must be non-negative\n")
        return EXIT_PARSE_ERROR
    rows = OrthonormalBasis(args.order).table_rows()
    header = "{:>3} {:>12} {:>12} {:>12} {:>12}  roots"
    print(header.format("k", "a_k", "c_k", "m_plus", "m_minus"))
    for row in rows:
        print(
            "{:>3} {:>12.6f} {:>12.6f} {:>12.6f} {:>12.6f}  {}".format(
                row["k"], row["a_k"], row["c_k"], row["m_plus"], row["m_minus"],
                " ".join("{:.6f}".format(r) for r in row["roots"]),
            )
        )
    if args.out:
        path = write_rows_csv(Path(args.out) / "basis.csv", BASIS_COLUMNS, rows)
        print("Wrote {}".format(path))
    return EXIT_OK


def _plot(args) -> int:
    scenario = parse_scenario(args.scenario)
    trajectories = read_member_trajectories_csv(args.rollout)
    out_dir = Path(args.out) if args.out else Path(args.rollout).parent
    path = out_dir / "plot.svg"
    render_svg(
        trajectories,
        constraints=scenario.regions + scenario.obstacles,
        waypoints=[poly for poly, _ in scenario.waypoints.values()],
        start=scenario.start[:2],
        goal=scenario.target,
        title=scenario.name,
        path=path,
    )
    print("Wrote {}".format(path))
    return EXIT_OK


def _run(args) -> int:
    scenario = parse_scenario(args.scenario)
    changes = {"mode": args.command}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.grid is not None:
        changes["grid"] = args.grid
    if getattr(args, "controls", None):
        changes["controls"] = str(Path(args.controls).resolve())
    if getattr(args, "no_obstacles", False):
        changes["obstacles"] = False
    scenario = scenario.with_run(**changes)
    artifacts = run(
        scenario, out_dir=args.out, progress=not getattr(args, "no_progress", False)
    )
    print(summary_line(artifacts))
    print("Artifacts in {}".format(artifacts.out_dir))
    return artifacts.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "basis":
            return _basis(args)
        if args.command == "plot":
            return _plot(args)
        return _run(args)
    except ScenarioValidationError as e:
        sys.stderr.write("[scenario] {}\n".format(e))
        return EXIT_PARSE_ERROR
    except FileNotFoundError as e:
        sys.stderr.write("[scenario] {}\n".format(e))
        return EXIT_PARSE_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
