import pytest

from ctxsched.markov import build_deterministic_robot, build_gridworld, default_robot_path
from ctxsched.penalty import SAFETY_LOSS, build_penalty_table


@pytest.fixture(scope="session")
def grid():
    return build_gridworld()


@pytest.fixture(scope="session")
def grid_table(grid):
    # default horizon from the mixing rule
    return build_penalty_table(grid, SAFETY_LOSS)


@pytest.fixture(scope="session")
def grid_table100(grid):
    return build_penalty_table(grid, SAFETY_LOSS, delta_max=100)


@pytest.fixture(scope="session")
def robot():
    return build_deterministic_robot(default_robot_path())


@pytest.fixture(scope="session")
def robot_table(robot):
    return build_penalty_table(robot, SAFETY_LOSS)


# acceptance criteria: one summary line each at the end of the run
_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None or (report.when != "call" and report.passed):
        return
    for n in marks:
        ok = _criteria.get(n, True) and report.passed
        _criteria[n] = ok


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    rep.criterion = [m.args[0] for m in item.iter_markers("criterion")] or None


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if _criteria[n] else 'FAIL'}")
