import os

import pytest

from artifacts import Artifacts


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    root = os.environ.get("PREPMANIP_TEST_CACHE") or str(tmp_path_factory.mktemp("artifacts"))
    os.makedirs(root, exist_ok=True)
    return Artifacts(root)


def pytest_terminal_summary(terminalreporter):
    from artifacts import VERDICTS
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'} - {detail}")
