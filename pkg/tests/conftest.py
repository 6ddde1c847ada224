import json
from pathlib import Path

import pytest

from specgeo.chem import MolecularGraph, parse_xyz

DATA = Path(__file__).parent / "data"


def load_records(name: str) -> list[dict]:
    with open(DATA / f"{name}.jsonl") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def geometry(rec):
    return parse_xyz(rec["xyz"])


def reference(rec) -> MolecularGraph:
    return MolecularGraph.from_dict(rec["graph"])


@pytest.fixture(scope="session")
def bond_corpus():
    return load_records("bond_corpus")


@pytest.fixture(scope="session")
def pattern_corpus():
    return load_records("bond_corpus") + load_records("pattern_corpus")


@pytest.fixture(scope="session")
def toy10():
    return load_records("toy10")


@pytest.fixture(scope="session")
def toy200():
    return load_records("toy200")


# --- one summary line per acceptance criterion ------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "tests": 0, "failed": []})
    if report.when == "call":
        entry["tests"] += 1
    if report.failed or (report.when == "call" and report.skipped):
        entry["passed"] = False
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["passed"] and e["tests"] else "FAIL"
        extra = f" (failed: {', '.join(e['failed'])})" if e["failed"] else ""
        terminalreporter.write_line(f"criterion {number:2d} {status}  {e['title']}{extra}")
