import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from videoswin import kernels  # noqa: E402

BACKENDS = ["python"] + (["compiled"] if kernels.compiled_backend is not None else [])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = kernels.python_backend if request.param == "python" else kernels.compiled_backend
    monkeypatch.setattr(kernels, "_impl", impl)
    return request.param


# -- acceptance summary ----------------------------------------------------
# Each acceptance test stores a one-line detail via the ``criterion`` fixture;
# the terminal summary prints one PASS/FAIL line per criterion.

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    entry = {"detail": ""}
    _CRITERIA[request.node.nodeid] = entry
    return entry


def pytest_runtest_logreport(report):
    entry = _CRITERIA.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call" or report.failed:
        entry["outcome"] = "PASS" if report.passed else "FAIL"
        entry["seconds"] = report.duration


def pytest_terminal_summary(terminalreporter):
    done = [(k, v) for k, v in _CRITERIA.items() if "outcome" in v]
    if not done:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, v in sorted(done, key=lambda kv: kv[0]):
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{v['outcome']}  {name}  ({v['seconds']:.1f}s)  {v['detail']}")
