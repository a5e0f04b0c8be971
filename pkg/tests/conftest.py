import pytest

# criterion number -> (passed, detail); filled by the acceptance tests
ACCEPTANCE = {}


def record(number: int, title: str, passed: bool, detail: str = ""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"\nCRITERION {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: long-running acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{n:2d}. {'PASS' if ok else 'FAIL'}  {title}  ({detail})")


@pytest.fixture
def acceptance_record():
    return record
