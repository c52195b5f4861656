import pytest


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request, capsys):
    """Record one pass/fail line per acceptance criterion, printed as it happens and again at the end."""

    def record(label: str, ok: bool, detail: str, soft: bool = False) -> bool:
        status = "PASS" if ok else ("FAIL (soft, non-blocking)" if soft else "FAIL")
        line = f"criterion {label}: {status} - {detail}"
        request.config._acceptance_lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
