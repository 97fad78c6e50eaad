import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tfcount.config import mock_config
from tfcount.synthetic import generate_scene

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def disk_scene():
    """10 target disks, 4 distractors, 3 reference disks."""
    return generate_scene(np.random.default_rng(3), n_targets=10, n_distractors=4, target_kind="disk")


@pytest.fixture(scope="session")
def mock_cfg():
    return mock_config()


# -- acceptance reporting -----------------------------------------------------
# Tests marked ``criterion("name")`` get one PASS/FAIL/SKIP line in the
# terminal summary, whatever the capture mode.

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _CRITERIA.append((status, mark.args[0], rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, dur in _CRITERIA:
        terminalreporter.write_line(f"{status:4s}  {name}  ({dur:.1f}s)")
