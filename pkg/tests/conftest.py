import sys
from collections import defaultdict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import Stub, start_van  # noqa: E402

_criteria: dict[int, dict] = defaultdict(lambda: {"text": "", "outcomes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        n, text = marker.args
        entry = _criteria[n]
        entry["text"] = text
        entry["outcomes"].append((item.name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        entry = _criteria[n]
        ok = all(o == "passed" for _, o in entry["outcomes"])
        failed = [name for name, o in entry["outcomes"] if o != "passed"]
        line = f"AC{n:<2} {'PASS' if ok else 'FAIL'}  {entry['text']}"
        if failed:
            line += f"  (failing: {', '.join(failed)})"
        terminalreporter.write_line(line)


@pytest.fixture
def van(tmp_path):
    svc = start_van(tmp_path)
    yield svc
    svc.stop()


@pytest.fixture
def stub():
    s = Stub().start()
    yield s
    s.stop()
