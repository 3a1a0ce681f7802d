from __future__ import annotations

from collections import defaultdict

import numpy as np
import pytest

from fairlens.synthetic import toy_dataset, toy_graph

_CRITERIA: dict[int, str] = {}
_OUTCOMES: dict[int, list[tuple[str, str]]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config.addinivalue_line("markers", "slow: long-running statistical or scale test")


def _criterion(item):
    m = item.get_closest_marker("criterion")
    return (m.args[0], m.args[1]) if m else None


def pytest_collection_modifyitems(items):
    for item in items:
        c = _criterion(item)
        if c:
            _CRITERIA[c[0]] = c[1]
            item.user_properties.append(("criterion", c[0]))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _OUTCOMES[crit].append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _OUTCOMES.get(n, [])
        if not results:
            status = "NOT RUN"
        elif all(o == "passed" for _, o in results):
            status = "PASS"
        else:
            status = "FAIL"
        failed = [name for name, o in results if o != "passed"]
        extra = f"  (failing: {', '.join(failed)})" if failed else ""
        tr.write_line(f"criterion {n:2d} {status:7s} {_CRITERIA[n]}{extra}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy1():
    return toy_dataset(1)


@pytest.fixture(scope="session")
def toy2():
    return toy_dataset(2)


@pytest.fixture(scope="session")
def toy_g():
    return toy_graph()
