import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def fixtures_dir():
    return FIXTURES


_ACCEPTANCE: dict[int, tuple[str, str]] = {}


class AcceptanceRecorder:
    def __init__(self, number: int):
        self.number = number

    def record(self, ok: bool, detail: str) -> None:
        _ACCEPTANCE[self.number] = ("PASS" if ok else "FAIL", detail)
        print(f"ACCEPTANCE {self.number}: {'PASS' if ok else 'FAIL'} {detail}")

    def skip(self, detail: str) -> None:
        _ACCEPTANCE[self.number] = ("SKIP", detail)
        pytest.skip(detail)


@pytest.fixture
def acceptance(request):
    number = request.node.get_closest_marker("criterion").args[0]
    rec = AcceptanceRecorder(number)
    yield rec
    _ACCEPTANCE.setdefault(number, ("FAIL", "error before a verdict was reached"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status} {detail}")
