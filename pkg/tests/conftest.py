import numpy as np
import pytest

from suda import autodiff as ad


def max_rel_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|, |n|, floor).

    Central differences at h=1e-5 carry roundoff near eps*|loss|/h, so for
    whole-network losses components far below 1e-6 are pure noise; those
    checks pass ``floor=1e-6``.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def fd_gradient(fn, param, h=1e-5):
    """Full central-difference gradient of scalar ``fn()`` w.r.t. ``param``."""
    grad = np.zeros_like(param.data)
    for index in np.ndindex(param.shape):
        grad[index] = ad.numerical_grad(fn, param, index, h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
