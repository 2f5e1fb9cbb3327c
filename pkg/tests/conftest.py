import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hegraph.backends import make_backend
from hegraph.he.context import make_context

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
logging.getLogger("hegraph").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def small_ctx():
    return make_context("ckks-ref", 1024, [40, 30, 30, 30], 30, 0)


@pytest.fixture(scope="session")
def small_backend(small_ctx):
    return make_backend(small_ctx, seed=11)


@pytest.fixture(scope="session")
def clear_ctx():
    return make_context("clear", 8192, [30] * 7, 30, 128)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion covered by the test")
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        item.config._criteria.append((mark.args[0], mark.args[1], report.outcome, report.duration, detail))


def pytest_terminal_summary(terminalreporter, config):
    rows = sorted(getattr(config, "_criteria", []))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, outcome, secs, detail in rows:
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"[{status}] {num}. {title} ({secs:.1f} s)"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)
