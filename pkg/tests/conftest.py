import pytest

from wav2pix.dataset import make_synthetic_fixture

_acceptance = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion number and summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _acceptance[n] = (text, rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        text, ok = _acceptance[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {text}")


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    """2 identities x 4 samples: cheap enough for many training steps."""
    return make_synthetic_fixture(2, 4, tmp_path_factory.mktemp("fx_small"), seed=0)


@pytest.fixture(scope="session")
def fixture_4x8(tmp_path_factory):
    return make_synthetic_fixture(4, 8, tmp_path_factory.mktemp("fx_4x8"), seed=0)
