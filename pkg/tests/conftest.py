import pytest

from graspkit import data


@pytest.fixture(scope="session")
def tiny_set():
    """Eight synthetic samples (four objects, two grasps each) at 128 points."""
    samples, split = data.build_dataset(4, 2, seed=0, n_points=128)
    return samples, split


@pytest.fixture(scope="session")
def tiny_samples(tiny_set):
    return tiny_set[0]


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k, text): acceptance criterion k")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    rep = outcome.get_result()
    k, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA[k] = (text, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        text, status = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {status}  {text}")
