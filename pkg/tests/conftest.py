import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marker = _MARKS.get(report.nodeid)
    if marker is None:
        return
    num, title = marker
    ok, _ = _CRITERIA.get(num, (True, title))
    _CRITERIA[num] = (ok and report.passed, title)


_MARKS = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _MARKS[item.nodeid] = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        ok, title = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def fixture_manifest(tmp_path_factory):
    """5 centers x 6 categories x 10 stub-TTS utterances, built once per session."""
    from clinasr.demo_data import prospective_fixture
    from clinasr.corpus import write_manifest

    out = tmp_path_factory.mktemp("fixture")
    m = prospective_fixture(out)
    write_manifest(m, out / "manifest.jsonl")
    return m
