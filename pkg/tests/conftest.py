import numpy as np
import pytest

from prograde.autodiff import Tensor, debug_mode
from prograde.autodiff import functional as F


@pytest.fixture(autouse=True)
def _debug_checks():
    """NaN/Inf detection after every primitive for the whole suite."""
    with debug_mode(True):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def projection_loss(out: Tensor, seed: int = 0) -> Tensor:
    """Smooth scalar readout: sum of the output weighted by a fixed random field."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return F.sum(out * Tensor(r.astype(out.dtype)))


# -- acceptance summary --------------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or not report.passed:
        # a criterion split over several tests passes only if all of them pass
        previous = _CRITERIA.get(number, (title, True))[1]
        _CRITERIA[number] = (title, previous and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {title}")
