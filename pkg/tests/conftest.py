from importlib import resources

import pytest

# (criterion, passed, detail) tuples appended by the acceptance suite.
ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def bundled_config():
    return resources.files("cafcor") / "configs" / "quadratic_f0.cfg"


@pytest.fixture
def verdict():
    def record(name: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} {name} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
