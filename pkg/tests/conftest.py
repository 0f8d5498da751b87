import numpy as np
import pytest
import torch

from shinemeg.dataset import SessionRecord

torch.set_num_threads(1)


def make_session(session_id="s0", n_channels=8, n_samples=5000, rate=250.0, seed=0, aux=True):
    rng = np.random.default_rng(seed)
    labels = (np.sin(np.arange(n_samples) / 97.0) > -0.3).astype(np.uint8)
    meg = rng.standard_normal((n_channels, n_samples)).astype(np.float32)
    env = rng.random(n_samples).astype(np.float32) if aux else None
    mel = rng.random((10, n_samples)).astype(np.float32) if aux else None
    return SessionRecord(session_id, meg, labels, rate, env, mel)


@pytest.fixture
def session():
    return make_session()


class Echo(torch.nn.Module):
    """Stub model: the MEG window is the prediction."""

    def forward(self, x):
        return x


class Negate(torch.nn.Module):
    def forward(self, x):
        return -x


# -- acceptance reporting ----------------------------------------------------
# Tests tagged @pytest.mark.criterion("name") are grouped; a criterion passes
# only if every test carrying it passed. One line per criterion is printed at
# the end of the run.

_criteria: dict = {}
_criterion_of: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by the test")


def pytest_collection_finish(session):
    for item in session.items:
        mark = item.get_closest_marker("criterion")
        if mark:
            _criterion_of[item.nodeid] = mark.args[0]
            _criteria.setdefault(mark.args[0], [])


def pytest_runtest_logreport(report):
    name = _criterion_of.get(report.nodeid)
    if name is None:
        return
    if report.when == "call" or report.failed or report.skipped:
        _criteria[name].append("passed" if report.passed else ("skipped" if report.skipped else "failed"))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in _criteria.items():
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"{status:<8}{name}")
