import pytest

# criterion number -> one-line verdict, filled in by test_acceptance
_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
