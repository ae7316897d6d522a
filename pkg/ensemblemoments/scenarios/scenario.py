"""
Scenario files: YAML documents with the blocks model, constraints, task and run. Every field
has a default in DEFAULTS; parse_scenario fills them in, validates the result and collects
every problem (with its field path) before raising ScenarioValidationError.
"""
import copy
import json
import math
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from ensemblemoments.constraints.obstacle import DEFAULT_BIG_M, ObstacleSpec, validate_big_m
from ensemblemoments.constraints.polyhedron import Polyhedron
from ensemblemoments.core.ensemble import (
    EnsembleGrid,
    ParameterInterval,
    UnicycleState,
    lift,
)
from ensemblemoments.core.exceptions import ConstructionError, ScenarioValidationError
from ensemblemoments.core.legendre import SignedPartTable
from ensemblemoments.core.moments import MomentVector, point_mass_moments
from ensemblemoments.optimization.ocp import OcpSpec
from ensemblemoments.optimization.solver import INNER_SOLVERS, SolverOptions
from ensemblemoments.stl.formula import (
    Always,
    And,
    Eventually,
    Not,
    Or,
    StlFormula,
    region_predicates,
    waypoint_formula,
)

MODES = ("transform", "simulate", "solve", "verify", "receding")
INTEGRATORS = ("rk4", "exact")

DEFAULTS = {
    "name": "scenario",
    "model": {
        "interval": {"lo": 0.9, "hi": 1.1},
        "order": 4,
        "start": {"x": 0.0, "y": 0.0, "theta": 0.0},
        "dt": 0.01,
    },
    "constraints": {
        "band_order": 2,
        "polyhedra": [],
        "obstacles": [],
    },
    "task": {
        "target": None,
        "horizon": None,
        "knots": 32,
        "knot_dt": None,
        "v_max": 2.0,
        "omega_max": 2.0,
        "weights": {"rho": 1.0, "terminal": 1.0, "control": 0.01},
        "sharpness": 10.0,
        "goal_tolerance": 0.1,
        "feasibility_tolerance": 1e-4,
        "waypoints": [],
        "formula": None,
    },
    "run": {
        "mode": "solve",
        "seed": 0,
        "grid": 50,
        "out": "out",
        "inner": "lbfgsb",
        "restarts": 2,
        "max_outer": 20,
        "max_inner": 200,
        "max_alternations": 6,
        "obstacles": True,
        "controls": None,
        "integrator": "rk4",
        "verify_tolerance": 0.05,
        "kkt_tolerance": 1e-4,
        "max_tightenings": 4,
        "plant_beta": None,
        "replan_every": None,
        "apply": 10,
    },
}


class _Checker:
    """Reads values out of nested mappings and records every problem with its field path."""

    def __init__(self):
        self.errors = []

    def error(self, path, message):
        self.errors.append("{}: {}".format(path, message))

    def mapping(self, value, path):
        if not isinstance(value, dict):
            self.error(path, "expected a mapping, got {!r}".format(value))
            return None
        return value

    def sequence(self, value, path):
        if not isinstance(value, list):
            self.error(path, "expected a list, got {!r}".format(value))
            return None
        return value

    def number(self, value, path, minimum=None, positive=False, integer=False, optional=False):
        if value is None and optional:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.error(path, "expected a number, got {!r}".format(value))
            return None
        if not math.isfinite(value):
            self.error(path, "must be finite")
            return None
        if integer and int(value) != value:
            self.error(path, "expected an integer, got {!r}".format(value))
            return None
        if positive and value <= 0:
            self.error(path, "must be positive, got {!r}".format(value))
            return None
        if minimum is not None and value < minimum:
            self.error(path, "must be at least {}, got {!r}".format(minimum, value))
            return None
        return int(value) if integer else float(value)

    def vector(self, value, path, length=None):
        values = self.sequence(value, path)
        if values is None:
            return None
        if length is not None and len(values) != length:
            self.error(path, "expected {} numbers, got {}".format(length, len(values)))
            return None
        numbers = [self.number(v, "{}[{}]".format(path, i)) for i, v in enumerate(values)]
        if any(n is None for n in numbers):
            return None
        return numbers

    def choice(self, value, path, choices):
        if value not in choices:
            self.error(path, "must be one of {}, got {!r}".format(list(choices), value))
            return None
        return value


def _merge(defaults, document, path, checker: _Checker):
    """Deep-merge a user document over the defaults; unknown keys are errors."""
    merged = copy.deepcopy(defaults)
    for key, value in document.items():
        field = "{}.{}".format(path, key) if path else str(key)
        if key not in defaults:
            checker.error(field, "unknown field")
            continue
        if isinstance(defaults[key], dict):
            block = checker.mapping(value, field)
            if block is not None:
                merged[key] = _merge(defaults[key], block, field, checker)
        else:
            merged[key] = value
    return merged


def _read_polygon(entry, path, checker: _Checker, two_sided: bool):
    """
    A region given either as `box: [x_min, x_max, y_min, y_max]` or by its matrix: `A` with
    `lower` and `upper` for regions, `A` with `b` (the obstacle is A x >= b) for obstacles.
    """
    if "box" in entry:
        box = checker.vector(entry["box"], path + ".box", 4)
        if box is None:
            return None
        if box[0] >= box[1] or box[2] >= box[3]:
            checker.error(path + ".box", "expected x_min < x_max and y_min < y_max")
            return None
        return {"box": box}
    if "A" not in entry:
        checker.error(path, "needs either box or A")
        return None
    rows = checker.sequence(entry["A"], path + ".A")
    if rows is None or len(rows) == 0:
        if rows is not None:
            checker.error(path + ".A", "needs at least one row")
        return None
    A = [checker.vector(row, "{}.A[{}]".format(path, i), 2) for i, row in enumerate(rows)]
    if any(row is None for row in A):
        return None
    keys = ("lower", "upper") if two_sided else ("b",)
    result = {"A": A}
    for key in keys:
        if key not in entry:
            checker.error(path + "." + key, "missing")
            return None
        values = checker.vector(entry[key], path + "." + key, len(A))
        if values is None:
            return None
        result[key] = values
    if two_sided and any(lo > hi for lo, hi in zip(result["lower"], result["upper"])):
        checker.error(path, "lower must not exceed upper")
        return None
    return result


def _polyhedron(geometry, name):
    if "box" in geometry:
        return Polyhedron.box(*geometry["box"], name=name)
    return Polyhedron(geometry["A"], geometry["lower"], geometry["upper"], name=name)


def _obstacle(geometry, name, big_m, clearance):
    if "box" in geometry:
        return ObstacleSpec.box(*geometry["box"], big_m=big_m, clearance=clearance, name=name)
    return ObstacleSpec(geometry["A"], geometry["b"], big_m=big_m, clearance=clearance, name=name)


def _check_entry_keys(entry, path, allowed, checker: _Checker):
    for key in entry:
        if key not in allowed:
            checker.error("{}.{}".format(path, key), "unknown field")


def _check_formula(node, path, names, horizon, checker: _Checker):
    """Validate a formula tree and resolve its waypoint references."""
    node = checker.mapping(node, path)
    if node is None:
        return
    if len(node) != 1:
        checker.error(path, "a formula node has exactly one key, got {}".format(sorted(node)))
        return
    (kind, value), = node.items()
    if kind == "waypoint":
        if value not in names:
            checker.error(path + ".waypoint", "unknown waypoint {!r}".format(value))
    elif kind == "not":
        _check_formula(value, path + ".not", names, horizon, checker)
    elif kind in ("and", "or"):
        children = checker.sequence(value, path + "." + kind)
        if children is not None:
            if len(children) == 0:
                checker.error(path + "." + kind, "needs at least one operand")
            for i, child in enumerate(children):
                _check_formula(child, "{}.{}[{}]".format(path, kind, i), names, horizon, checker)
    elif kind in ("eventually", "always"):
        field = path + "." + kind
        body = checker.mapping(value, field)
        if body is None:
            return
        _check_entry_keys(body, field, ("window", "formula", "waypoint"), checker)
        window = checker.vector(body.get("window"), field + ".window", 2)
        if window is not None:
            if not 0 <= window[0] <= window[1]:
                checker.error(field + ".window", "expected 0 <= start <= end")
            elif horizon is not None and window[1] > horizon + 1e-9:
                checker.error(
                    field + ".window",
                    "ends at {} after the horizon {} (task.horizon)".format(window[1], horizon),
                )
        if ("formula" in body) == ("waypoint" in body):
            checker.error(field, "needs exactly one of formula or waypoint")
        elif "formula" in body:
            _check_formula(body["formula"], field + ".formula", names, horizon, checker)
        else:
            _check_formula({"waypoint": body["waypoint"]}, field, names, horizon, checker)
    else:
        checker.error(path, "unknown formula operator {!r}".format(kind))


def build_formula(node, waypoints: Dict[str, Polyhedron], table: SignedPartTable) -> StlFormula:
    """Turn a validated formula tree into an StlFormula over the order-0 position moments."""
    (kind, value), = node.items()
    if kind == "waypoint":
        return And(region_predicates(waypoints[value], table, 0))
    if kind == "not":
        return Not(build_formula(value, waypoints, table))
    if kind in ("and", "or"):
        children = [build_formula(child, waypoints, table) for child in value]
        return And(children) if kind == "and" else Or(children)
    if "formula" in value:
        child = build_formula(value["formula"], waypoints, table)
    else:
        child = build_formula({"waypoint": value["waypoint"]}, waypoints, table)
    temporal = Eventually if kind == "eventually" else Always
    return temporal(tuple(value["window"]), child)


class ScenarioFile:
    """
    A validated scenario. `config` holds the complete resolved document (defaults filled in),
    which is also what to_dict() returns and what runs echo as their resolved configuration.
    """

    def __init__(self, config: dict, source: Optional[str] = None):
        self.config = config
        self.source = source
        model = config["model"]
        constraints = config["constraints"]
        task = config["task"]
        self.name = config["name"]
        self.interval = ParameterInterval(model["interval"]["lo"], model["interval"]["hi"])
        self.order = model["order"]
        start = model["start"]
        self.start = UnicycleState(start["x"], start["y"], start["theta"])
        self.dt = model["dt"]
        self.band_order = constraints["band_order"]
        self.regions = [
            _polyhedron(entry["geometry"], entry["name"]) for entry in constraints["polyhedra"]
        ]
        self.region_insets = [entry["inset"] for entry in constraints["polyhedra"]]
        self.obstacles = [
            _obstacle(entry["geometry"], entry["name"], entry["big_m"], entry["clearance"])
            for entry in constraints["obstacles"]
        ]
        self.waypoints = {
            entry["name"]: (_polyhedron(entry["geometry"], entry["name"]), tuple(entry["window"]))
            for entry in task["waypoints"]
        }
        self.target = tuple(task["target"])
        self.horizon = task["horizon"]
        self.knots = task["knots"]
        self.run = config["run"]

    @property
    def mode(self):
        return self.run["mode"]

    @property
    def base_dir(self):
        return os.path.dirname(os.path.abspath(self.source)) if self.source else os.getcwd()

    def resolve_path(self, path):
        """Paths inside a scenario are relative to the scenario file."""
        if path is None or os.path.isabs(path):
            return path
        return os.path.join(self.base_dir, path)

    def initial_moments(self) -> MomentVector:
        return point_mass_moments(lift(self.start), self.order, self.interval)

    def build_formula(self, table: SignedPartTable) -> Optional[StlFormula]:
        formula = self.config["task"]["formula"]
        if formula is not None:
            waypoints = {name: poly for name, (poly, _) in self.waypoints.items()}
            return build_formula(formula, waypoints, table)
        if self.waypoints:
            return waypoint_formula(list(self.waypoints.values()), table, 0, self.horizon)
        return None

    def build_spec(self, obstacles_enabled: Optional[bool] = None) -> OcpSpec:
        """
        :param obstacles_enabled: Override run.obstacles. With False the obstacles are left
            out of the problem, the unconstrained setting.
        """
        if obstacles_enabled is None:
            obstacles_enabled = self.run["obstacles"]
        task = self.config["task"]
        weights = task["weights"]
        spec = OcpSpec(
            initial=self.initial_moments(),
            target=self.target,
            horizon=self.horizon,
            knots=self.knots,
            v_max=task["v_max"],
            omega_max=task["omega_max"],
            regions=self.regions,
            region_insets=self.region_insets,
            band_orders=self.band_order,
            obstacles=self.obstacles if obstacles_enabled else [],
            weights=(weights["rho"], weights["terminal"], weights["control"]),
            sharpness=task["sharpness"],
            goal_tolerance=task["goal_tolerance"],
            feasibility_tolerance=task["feasibility_tolerance"],
            dt=self.dt,
            start=lift(self.start),
        )
        formula = self.build_formula(spec.table)
        return spec if formula is None else spec.copy(formula=formula)

    def workspace(self, padding: float = 1.0):
        """Bounding box (x_min, x_max, y_min, y_max) of every point the scenario names, padded."""
        points = [np.array([self.start[:2]]), np.array([self.target])]
        points += [poly.vertices() for poly in self.regions]
        points += [poly.vertices() for poly, _ in self.waypoints.values()]
        points += [obstacle.inflated().vertices() for obstacle in self.obstacles]
        points = np.vstack([p for p in points if len(p)])
        low = points.min(axis=0) - padding
        high = points.max(axis=0) + padding
        return float(low[0]), float(high[0]), float(low[1]), float(high[1])

    def check_big_m(self) -> Dict[str, bool]:
        """Run validate_big_m for every obstacle over the workspace; warns for each failure."""
        workspace = self.workspace()
        return {
            obstacle.name: validate_big_m(obstacle.inflated(), workspace)
            for obstacle in self.obstacles
        }

    def solver_options(self) -> SolverOptions:
        return SolverOptions(
            inner=self.run["inner"],
            max_outer=self.run["max_outer"],
            max_inner=self.run["max_inner"],
            restarts=self.run["restarts"],
            seed=self.run["seed"],
            max_alternations=self.run["max_alternations"],
            grid_size=self.run["grid"],
            verify_tolerance=self.run["verify_tolerance"],
            kkt_tolerance=self.run["kkt_tolerance"],
            max_tightenings=self.run["max_tightenings"],
        )

    def grid(self) -> EnsembleGrid:
        return EnsembleGrid.uniform(self.interval, self.run["grid"])

    def plant(self):
        """The simulated plant of receding runs: one traction value, else the run grid."""
        if self.run["plant_beta"] is not None:
            return EnsembleGrid.single(self.interval, self.run["plant_beta"])
        return self.grid()

    def with_run(self, **changes) -> "ScenarioFile":
        """A copy with some run settings replaced, validated again."""
        config = copy.deepcopy(self.config)
        config["run"].update(changes)
        return parse_config(_to_document(config), self.source)

    def to_dict(self) -> dict:
        document = _to_document(self.config)
        document["run"]["controls"] = self.resolve_path(document["run"]["controls"])
        return document


def _to_document(config):
    """Resolved configuration in the same shape a scenario file uses."""
    document = copy.deepcopy(config)
    lists = (("constraints", "polyhedra"), ("constraints", "obstacles"), ("task", "waypoints"))
    for block, key in lists:
        for entry in document[block][key]:
            entry.update(entry.pop("geometry"))
    return document


def _check_model(model, checker: _Checker):
    interval = model["interval"]
    lo = checker.number(interval["lo"], "model.interval.lo")
    hi = checker.number(interval["hi"], "model.interval.hi")
    if lo is not None and hi is not None and lo >= hi:
        checker.error("model.interval", "expected lo < hi, got [{}, {}]".format(lo, hi))
    model["order"] = checker.number(model["order"], "model.order", minimum=0, integer=True)
    for key in ("x", "y", "theta"):
        model["start"][key] = checker.number(model["start"][key], "model.start." + key)
    model["dt"] = checker.number(model["dt"], "model.dt", positive=True)


def _check_regions(constraints, checker: _Checker):
    constraints["band_order"] = checker.number(
        constraints["band_order"], "constraints.band_order", minimum=0, integer=True
    )
    polyhedra = checker.sequence(constraints["polyhedra"], "constraints.polyhedra") or []
    resolved = []
    for i, entry in enumerate(polyhedra):
        path = "constraints.polyhedra[{}]".format(i)
        entry = checker.mapping(entry, path)
        if entry is None:
            continue
        _check_entry_keys(entry, path, ("name", "box", "A", "lower", "upper", "inset"), checker)
        geometry = _read_polygon(entry, path, checker, two_sided=True)
        inset = checker.number(entry.get("inset", 0.0), path + ".inset", minimum=0.0)
        name = str(entry.get("name", "region-{}".format(i)))
        resolved.append({"name": name, "geometry": geometry, "inset": inset})
    constraints["polyhedra"] = resolved

    obstacles = checker.sequence(constraints["obstacles"], "constraints.obstacles") or []
    resolved = []
    for i, entry in enumerate(obstacles):
        path = "constraints.obstacles[{}]".format(i)
        entry = checker.mapping(entry, path)
        if entry is None:
            continue
        _check_entry_keys(entry, path, ("name", "box", "A", "b", "big_m", "clearance"), checker)
        geometry = _read_polygon(entry, path, checker, two_sided=False)
        big_m = checker.number(entry.get("big_m", DEFAULT_BIG_M), path + ".big_m", positive=True)
        clearance = checker.number(entry.get("clearance", 0.0), path + ".clearance", minimum=0.0)
        name = str(entry.get("name", "obstacle-{}".format(i)))
        if geometry is not None and big_m is not None and clearance is not None:
            try:
                _obstacle(geometry, name, big_m, clearance).validate()
            except ConstructionError as e:
                checker.error(path, str(e))
        resolved.append(
            {"name": name, "geometry": geometry, "big_m": big_m, "clearance": clearance}
        )
    constraints["obstacles"] = resolved


def _check_task(task, model, checker: _Checker):
    if task["target"] is None:
        checker.error("task.target", "missing")
    else:
        task["target"] = checker.vector(task["target"], "task.target", 2)
    if task["horizon"] is None:
        checker.error("task.horizon", "missing")
    else:
        task["horizon"] = checker.number(task["horizon"], "task.horizon", positive=True)
    task["knots"] = checker.number(task["knots"], "task.knots", minimum=1, integer=True)
    task["knot_dt"] = checker.number(task["knot_dt"], "task.knot_dt", positive=True, optional=True)
    horizon, knots, dt = task["horizon"], task["knots"], model["dt"]
    if horizon is not None and knots is not None:
        knot_dt = horizon / knots
        if task["knot_dt"] is not None and abs(task["knot_dt"] - knot_dt) > 1e-9 * knot_dt:
            checker.error(
                "task.horizon, task.knots",
                "horizon {} is not knots {} x knot_dt {}".format(horizon, knots, task["knot_dt"]),
            )
        elif dt is not None:
            ratio = knot_dt / dt
            if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-6 * ratio:
                checker.error(
                    "task.horizon, task.knots",
                    "the knot step horizon / knots = {:.6g} is not a multiple of"
                    " model.dt {}".format(knot_dt, dt),
                )
    for key in ("v_max", "omega_max", "sharpness"):
        task[key] = checker.number(task[key], "task." + key, positive=True)
    for key in ("goal_tolerance", "feasibility_tolerance"):
        task[key] = checker.number(task[key], "task." + key, positive=True)
    for key in ("rho", "terminal", "control"):
        task["weights"][key] = checker.number(
            task["weights"][key], "task.weights." + key, minimum=0.0
        )

    waypoints = checker.sequence(task["waypoints"], "task.waypoints") or []
    resolved = []
    for i, entry in enumerate(waypoints):
        path = "task.waypoints[{}]".format(i)
        entry = checker.mapping(entry, path)
        if entry is None:
            continue
        _check_entry_keys(entry, path, ("name", "box", "A", "lower", "upper", "window"), checker)
        if "name" not in entry:
            checker.error(path + ".name", "missing")
            continue
        geometry = _read_polygon(entry, path, checker, two_sided=True)
        default_window = None if horizon is None else [0.0, horizon]
        window = checker.vector(entry.get("window", default_window), path + ".window", 2)
        if window is not None:
            if not 0 <= window[0] <= window[1]:
                checker.error(path + ".window", "expected 0 <= start <= end")
            elif horizon is not None and window[1] > horizon + 1e-9:
                checker.error(
                    path + ".window",
                    "ends at {} after the horizon {} (task.horizon)".format(window[1], horizon),
                )
        if str(entry["name"]) in [w["name"] for w in resolved]:
            checker.error(path + ".name", "duplicate waypoint {!r}".format(entry["name"]))
        resolved.append({"name": str(entry["name"]), "geometry": geometry, "window": window})
    task["waypoints"] = resolved
    if task["formula"] is not None:
        _check_formula(
            task["formula"], "task.formula", [w["name"] for w in resolved], horizon, checker
        )


def _check_run(run, checker: _Checker):
    run["mode"] = checker.choice(run["mode"], "run.mode", MODES)
    run["seed"] = checker.number(run["seed"], "run.seed", minimum=0, integer=True)
    run["grid"] = checker.number(run["grid"], "run.grid", minimum=2, integer=True)
    if not isinstance(run["out"], str):
        checker.error("run.out", "expected a path")
    run["inner"] = checker.choice(run["inner"], "run.inner", INNER_SOLVERS)
    run["integrator"] = checker.choice(run["integrator"], "run.integrator", INTEGRATORS)
    run["restarts"] = checker.number(run["restarts"], "run.restarts", minimum=0, integer=True)
    for key in ("max_outer", "max_inner", "max_alternations", "apply"):
        run[key] = checker.number(run[key], "run." + key, minimum=1, integer=True)
    run["max_tightenings"] = checker.number(
        run["max_tightenings"], "run.max_tightenings", minimum=0, integer=True
    )
    run["replan_every"] = checker.number(
        run["replan_every"], "run.replan_every", minimum=1, integer=True, optional=True
    )
    run["verify_tolerance"] = checker.number(
        run["verify_tolerance"], "run.verify_tolerance", minimum=0.0
    )
    run["kkt_tolerance"] = checker.number(
        run["kkt_tolerance"], "run.kkt_tolerance", positive=True
    )
    run["plant_beta"] = checker.number(run["plant_beta"], "run.plant_beta", optional=True)
    if not isinstance(run["obstacles"], bool):
        checker.error("run.obstacles", "expected true or false")
    if run["controls"] is not None and not isinstance(run["controls"], str):
        checker.error("run.controls", "expected a path")
    if run["mode"] == "verify" and run["controls"] is None:
        checker.error("run.controls", "verify mode needs a controls file")


def parse_config(document, source: Optional[str] = None) -> ScenarioFile:
    """Validate an already loaded scenario document."""
    checker = _Checker()
    if document is None:
        document = {}
    if checker.mapping(document, "scenario") is None:
        raise ScenarioValidationError(checker.errors)
    config = _merge(DEFAULTS, document, "", checker)
    if checker.errors:
        raise ScenarioValidationError(checker.errors)
    config["name"] = str(config["name"])
    _check_model(config["model"], checker)
    _check_regions(config["constraints"], checker)
    _check_task(config["task"], config["model"], checker)
    _check_run(config["run"], checker)

    run, task = config["run"], config["task"]
    if not checker.errors:
        interval = ParameterInterval(**config["model"]["interval"])
        if run["plant_beta"] is not None and not interval.contains(run["plant_beta"]):
            checker.error("run.plant_beta", "must lie inside model.interval")
        replan_every = run["replan_every"]
        if replan_every is not None and not run["apply"] <= replan_every <= task["knots"]:
            checker.error(
                "run.replan_every", "expected run.apply <= replan_every <= task.knots"
            )
        if run["apply"] > task["knots"]:
            checker.error("run.apply", "must not exceed task.knots")
    if checker.errors:
        raise ScenarioValidationError(checker.errors)
    return ScenarioFile(config, source)


def parse_scenario(path) -> ScenarioFile:
    """
    Load and validate a scenario file. Files ending in .json, such as the resolved_config.json
    every run writes, are read as JSON; anything else as YAML.
    """
    path = str(path)
    with open(path, "r") as f:
        text = f.read()
    try:
        document = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as e:
        raise ScenarioValidationError(["{}: cannot be parsed ({})".format(path, e)])
    return parse_config(document, source=path)


def bundled_scenarios() -> List[Tuple[str, str]]:
    """(name, path) of every scenario shipped with the package."""
    data_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
    return [
        (filename[: -len(".scenario")], os.path.join(data_dir, filename))
        for filename in sorted(os.listdir(data_dir))
        if filename.endswith(".scenario")
    ]
