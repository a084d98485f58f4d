"""Shared fixtures: assembled two-area models and their linearisations are
expensive, so they are built once per session."""

from __future__ import annotations

import numpy as np
import pytest

from dpibr.analysis import eigenanalysis, find_mode, linearize
from dpibr.config import bundled_system
from dpibr.system import assemble, initialize

DC_INPUTS = ["p_dc:DC7", "p_dc:DC9"]
CTRL_INPUTS = ["u_q:IBR1", "u_q:IBR2"]
CTRL_OUTPUTS = ["vmag:IBR1", "vmag:IBR2", "tie_power"]


def build(bw):
    model = assemble(bundled_system(bw))
    initialize(model)
    return model


@pytest.fixture(scope="session")
def model15():
    return build(15.0)


@pytest.fixture(scope="session")
def model20():
    return build(20.0)


@pytest.fixture(scope="session")
def lm15(model15):
    return linearize(model15, inputs=DC_INPUTS + CTRL_INPUTS, outputs=CTRL_OUTPUTS)


@pytest.fixture(scope="session")
def lm20(model20):
    return linearize(model20, inputs=DC_INPUTS + CTRL_INPUTS, outputs=CTRL_OUTPUTS)


@pytest.fixture(scope="session")
def sso15(lm15):
    return find_mode(eigenanalysis(lm15), names=lm15.state_names)


@pytest.fixture(scope="session")
def sso20(lm20):
    return find_mode(eigenanalysis(lm20), names=lm20.state_names)


@pytest.fixture
def rng():
    return np.random.default_rng(20260417)


def random_stable(rng, n, m=1, p=1, margin=0.05):
    """Random stable real state-space model (A shifted into the LHP)."""
    from dpibr.analysis import LinearModel
    A = rng.normal(size=(n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + margin + rng.uniform(0, 1)) * np.eye(n)
    return LinearModel(A, rng.normal(size=(n, m)), rng.normal(size=(p, n)), np.zeros((p, m)),
                       [f"x{i}" for i in range(n)], [f"u{i}" for i in range(m)],
                       [f"y{i}" for i in range(p)])


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, passed: bool, detail: str) -> bool:
    """Record and print one acceptance check line."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checks")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
