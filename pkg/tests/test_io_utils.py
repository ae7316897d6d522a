import numpy as np
import pytest
from numpy.testing import assert_allclose

from ensemblemoments.core.ensemble import (
    ControlSequence,
    EnsembleGrid,
    LiftedState,
    ParameterInterval,
    rollout_ensemble,
)
from ensemblemoments.core.io_utils import (
    read_controls_csv,
    read_member_trajectories_csv,
    write_controls_csv,
    write_member_trajectories_csv,
    write_moment_trajectory_csv,
    write_rows_csv,
)
from ensemblemoments.core.moments import integrate_moments, point_mass_moments
from tests.utils import constant_controls


class TestControlsCsv:
    def test_write_and_read(self, tmp_path):
        controls = ControlSequence(0.05, [[1.0, 0.5], [0.25, -2.0], [0.0, 0.0]])
        path = write_controls_csv(tmp_path / "controls.csv", controls)
        assert path.read_text().splitlines()[0] == "t_start,t_end,v,omega"
        loaded = read_controls_csv(path)
        assert loaded.dt == pytest.approx(0.05)
        assert_allclose(loaded.pairs, controls.pairs)

    def test_step_survives_rounding(self, tmp_path):
        controls = ControlSequence(2.0 / 30, np.ones((30, 2)))
        loaded = read_controls_csv(write_controls_csv(tmp_path / "controls.csv", controls))
        assert loaded.num_steps == 30
        assert loaded.dt == pytest.approx(2.0 / 30, rel=1e-12)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "controls.csv"
        path.write_text("t_start,v\n0,1\n")
        with pytest.raises(ValueError, match="missing"):
            read_controls_csv(path)

    def test_no_rows(self, tmp_path):
        path = tmp_path / "controls.csv"
        path.write_text("t_start,t_end,v,omega\n")
        with pytest.raises(ValueError, match="no control steps"):
            read_controls_csv(path)


class TestTrajectoryCsv:
    def test_member_trajectories(self, tmp_path):
        grid = EnsembleGrid.uniform(ParameterInterval(0.9, 1.1), 3)
        trajectories = rollout_ensemble(grid, [0, 0, 1, 0], constant_controls(1.0, 0.5, 0.2))
        path = write_member_trajectories_csv(tmp_path / "rollout.csv", trajectories)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,beta,px,py,theta"
        assert len(lines) == 1 + 3 * 21
        loaded = read_member_trajectories_csv(path)
        assert [t.beta for t in loaded] == pytest.approx(list(grid.samples))
        for original, copy in zip(trajectories, loaded):
            assert copy.dt == pytest.approx(0.01)
            assert_allclose(copy.positions, original.positions, atol=1e-10)
            assert_allclose(copy.headings(), original.headings(), atol=1e-10)

    def test_moment_trajectory(self, tmp_path):
        m0 = point_mass_moments(LiftedState(0, 0, 1, 0), 2, ParameterInterval(0.9, 1.1))
        trajectory = integrate_moments(m0, constant_controls(1.0, 0.0, 0.05))
        path = write_moment_trajectory_csv(tmp_path / "moments.csv", trajectory)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,k,m_px,m_py,m_c,m_s"
        assert len(lines) == 1 + 6 * 3


class TestWriteRows:
    def test_formatting(self, tmp_path):
        rows = [{"name": "a", "value": 1.0 / 3.0, "roots": np.array([0.5, -0.5]), "k": 2}]
        fieldnames = ["name", "value", "roots", "k"]
        path = write_rows_csv(tmp_path / "nested" / "rows.csv", fieldnames, rows)
        assert path.read_text() == "name,value,roots,k\na,0.333333333333,0.5 -0.5,2\n"
