import pytest

from tokenqueue.applications import build_mmk_hetero, reference_models
from tokenqueue.product_form import StationaryMeasure

_criteria = {}


@pytest.fixture(scope="session")
def models():
    return reference_models()


@pytest.fixture(scope="session")
def measures(models):
    return {name: StationaryMeasure(spec) for name, spec in models.items()}


@pytest.fixture(scope="session")
def mm1():
    return build_mmk_hetero([1.0], 0.5)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py::test_criterion_" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _criteria[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        verdict = "PASS" if _criteria[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
