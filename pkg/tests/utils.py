import os

import numpy as np

from ensemblemoments.core.ensemble import ControlSequence, LiftedState, ParameterInterval
from ensemblemoments.core.moments import point_mass_moments
from ensemblemoments.optimization.ocp import OcpSpec

DATA_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
    "ensemblemoments",
    "scenarios",
    "data",
)


def scenario_path(name):
    return os.path.join(DATA_DIR, "{}.scenario".format(name))


def constant_controls(v, omega, duration, dt=0.01):
    """Hold (v, omega) for `duration` seconds in steps of dt."""
    steps = int(round(duration / dt))
    return ControlSequence(dt, np.tile([v, omega], (steps, 1)))


def small_problem(target=(1.0, 1.0), knots=8, horizon=2.0, order=2, **kwargs):
    """A cheap problem for solver tests: start at the origin heading along +y."""
    start = LiftedState(0.0, 0.0, 1.0, 0.0)
    initial = point_mass_moments(start, order, ParameterInterval(0.9, 1.1))
    return OcpSpec(
        initial=initial,
        target=target,
        horizon=horizon,
        knots=knots,
        start=start,
        **kwargs
    )
