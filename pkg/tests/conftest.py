import pytest

ACCEPTANCE_LINES = []


def record_acceptance(number: int, ok: bool, detail: str, soft: bool = False) -> None:
    tag = "PASS" if ok else ("WARN" if soft else "FAIL")
    ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {tag}  {detail}"))


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
