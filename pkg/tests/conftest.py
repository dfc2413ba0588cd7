import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from toy_data import toy_corpus, write_toy_files  # noqa: E402


@pytest.fixture(scope="session")
def toy():
    return toy_corpus()


@pytest.fixture
def toy_files(tmp_path, toy):
    docs, queries, judgments = toy
    corpus_path, queries_path = write_toy_files(tmp_path, docs, queries, judgments)
    return corpus_path, queries_path


_CRITERIA: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    failed = rep.failed
    if rep.when == "call" or failed:
        prev_ok = _CRITERIA.get(n, (title, True))[1]
        _CRITERIA[n] = (title, prev_ok and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
