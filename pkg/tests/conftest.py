import numpy as np
import pytest

from splatsem.synth import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def assert_close(a, b, tol):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    assert a.shape == b.shape, (a.shape, b.shape)
    err = float(np.max(np.abs(a - b))) if a.size else 0.0
    assert err <= tol, f"max abs error {err:.3e} > {tol:.1e}"


# -- acceptance summary ------------------------------------------------------------

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    number, title = mark.args
    _ACCEPTANCE.append((number, title, "PASS" if report.passed else "FAIL", report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, title, verdict, secs in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {title} ({secs:.2f} s)")
