import pytest

from qstfield.model import ModelParams

RESULTS: dict[int, str] = {}


def record(number: int, passed: bool, detail: str) -> bool:
    """Store the one-line outcome of an acceptance criterion and echo it."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}"
    RESULTS[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])


@pytest.fixture(params=[0.5, 1.0], ids=lambda lam: f"lam={lam}")
def params(request):
    return ModelParams(1.0, request.param)
