import os

import numpy as np
import time
from tqdm import tqdm

from ensemblemoments.scenarios.runner import check_expected, load_expected, run, summary_line
from ensemblemoments.scenarios.scenario import bundled_scenarios, parse_scenario

DEMO_DIR = os.path.dirname(__file__)


class timer(object):
    """
    timer: A class used to measure the execution time of a block of code that is
    inside a "with" statement.

    Example:

    ```
    with timer("Solve box"):
        run(parse_scenario("box.scenario"))
    ```

    Will output:
    Solve box: 1.23 s

    Warning: The time resolution used here may be limited to 1 ms
    """

    def __init__(self, description="Execution time", verbose=False):
        self.description = description
        self.verbose = verbose
        self.execution_time = None

    def __enter__(self):
        self.t = time.time()
        return self

    def __exit__(self, type, value, traceback):
        self.execution_time = time.time() - self.t
        if self.verbose:
            print("{}: {:.3f} s".format(self.description, self.execution_time))


if __name__ == "__main__":
    """
    Run every bundled scenario that has an expected outcome, write its artifacts to an output
    folder and compare the outcome with the expectation. Also crudely measure and print
    execution time.
    """
    output_dir = os.path.join(DEMO_DIR, "output")
    os.makedirs(output_dir, exist_ok=True)

    scenarios = [
        (name, path) for name, path in bundled_scenarios() if load_expected(path) is not None
    ]
    execution_times = {}
    problems = {}
    for name, path in tqdm(scenarios):
        scenario = parse_scenario(path)
        with timer() as t:
            artifacts = run(scenario, os.path.join(output_dir, name), progress=False)
        execution_times[name] = t.execution_time
        problems[name] = check_expected(artifacts.summary, load_expected(path))
        print(summary_line(artifacts))

    for name in execution_times:
        status = "ok" if not problems[name] else "; ".join(problems[name])
        print("{:<32} {:.3f} s  {}".format(name, execution_times[name], status))
    print(
        "Total: {:.3f} s, {} of {} as expected".format(
            np.sum(list(execution_times.values())),
            sum(1 for p in problems.values() if not p),
            len(problems),
        )
    )
