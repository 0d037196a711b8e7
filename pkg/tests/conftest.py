import pytest

from memrc.device import STANDARD_BANK, load_presets


@pytest.fixture(scope="session")
def presets():
    return load_presets()


@pytest.fixture(scope="session")
def p3(presets):
    return presets["3.0uM"]


@pytest.fixture(scope="session")
def p1(presets):
    return presets["1.0uM"]


@pytest.fixture(scope="session")
def bank5(presets):
    return [presets[k] for k in STANDARD_BANK]


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Log one acceptance outcome; the terminal summary prints them in order."""
    def _record(n: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
