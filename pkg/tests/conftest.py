import json

import pytest

from cascadeflow import case_path, load_case

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def doc_of():
    def _load(name):
        return json.loads(case_path(name).read_text())
    return _load


@pytest.fixture(scope="session")
def ieee14():
    return load_case(case_path("ieee14"))


@pytest.fixture(scope="session")
def ieee14_ufls():
    return load_case(case_path("ieee14_ufls"))


@pytest.fixture(scope="session")
def two_bus():
    return load_case(case_path("two_bus"))


@pytest.fixture(scope="session")
def parallel3():
    return load_case(case_path("parallel3"))


@pytest.fixture(scope="session")
def cascade30():
    return load_case(case_path("cascade30"))
