import os

import numpy as np
import pytest

from ensemblemoments.core.ensemble import ensemble_states, rollout_ensemble
from ensemblemoments.core.io_utils import read_controls_csv
from ensemblemoments.scenarios.runner import EXIT_OK, check_expected, load_expected, run
from ensemblemoments.scenarios.scenario import parse_scenario
from tests.utils import DATA_DIR, scenario_path

EXPECTED = sorted(
    filename[: -len(".expected")]
    for filename in os.listdir(DATA_DIR)
    if filename.endswith(".expected")
)


def rollout_from(out_dir, scenario, spec):
    controls = read_controls_csv(out_dir / "controls.csv")
    return rollout_ensemble(scenario.grid(), spec.start, controls.expand(spec.dt))


def mean_path_length(trajectories):
    mean = ensemble_states(trajectories)[:, :, :2].mean(axis=1)
    return float(np.sum(np.linalg.norm(np.diff(mean, axis=0), axis=1)))


@pytest.mark.acceptance
class TestBundledScenarios:
    @pytest.mark.parametrize("name", EXPECTED)
    def test_expected_outcome(self, name, tmp_path):
        path = scenario_path(name)
        artifacts = run(parse_scenario(path), tmp_path, progress=False)
        assert check_expected(artifacts.summary, load_expected(path)) == []
        assert artifacts.exit_code == EXIT_OK

    def test_ignoring_the_obstacle(self, tmp_path):
        scenario = parse_scenario(scenario_path("one_obstacle"))
        spec = scenario.build_spec()
        avoiding = run(scenario, tmp_path / "avoid", progress=False)
        assert avoiding.summary["verification"]["max_penetration"] <= 0.05
        run(scenario.with_run(obstacles=False), tmp_path / "ignore", progress=False)

        avoiding_rollout = rollout_from(tmp_path / "avoid", scenario, spec)
        ignoring_rollout = rollout_from(tmp_path / "ignore", scenario, spec)
        mean = ensemble_states(ignoring_rollout)[:, :, :2].mean(axis=1)
        enters = bool(np.any(spec.obstacles[0].contains(mean)))
        shorter = mean_path_length(ignoring_rollout) < mean_path_length(avoiding_rollout)
        assert enters or shorter
