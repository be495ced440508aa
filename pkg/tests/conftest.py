"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

CRITERIA = {
    1: "finite range of the single-scale fluctuation (3L)",
    2: "finite range of rescaled levels (6L)",
    3: "positive semidefinite spectra",
    4: "Fourier reconstruction of the resolvent",
    5: "Poisson kernel vs random-walk oracle",
    6: "defect bound of averaging kernels",
    7: "level-scaling relation",
    8: "Levy constant, quadrature and reconstruction",
    9: "geometric convergence of levels",
    10: "uniform Sobolev bounds and mass trend",
    11: "sampler covariance fidelity",
    12: "energy identity and Poincare inequality",
    13: "verify runtime",
}

_outcomes = {}
_notes = {}
_nodes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _nodes[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    n = _nodes.get(report.nodeid)
    if n is None:
        return
    if report.failed:
        _outcomes[n] = "FAIL"
    elif report.when == "call" and report.passed:
        _outcomes.setdefault(n, "PASS")
    elif report.skipped:
        _outcomes.setdefault(n, "SKIP")


@pytest.fixture
def note(request):
    """Attach a one-line measured summary to the test's criterion."""
    mark = request.node.get_closest_marker("criterion")

    def add(text):
        _notes.setdefault(mark.args[0], []).append(text)
    return add


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        detail = "; ".join(_notes.get(n, []))
        line = f"criterion {n:2d} {_outcomes[n]}: {CRITERIA[n]}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
