import pytest

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


@pytest.fixture
def verdict(request):
    """Record one acceptance criterion: print a PASS/FAIL line, then assert."""

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_VERDICTS][number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_VERDICTS]
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
