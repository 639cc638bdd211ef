import numpy as np
import pytest
import torch

from skelgait.numerics import Rng
from skelgait.skeleton import build_graph, build_layout

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture(scope="session")
def openpose():
    return build_layout("openpose18")


@pytest.fixture(scope="session")
def openpose_graph(openpose):
    return build_graph(openpose)


def chain_layout():
    from skelgait.skeleton import JointLayout

    # a - b - c with b as center
    return JointLayout("chain3", 3, ((0, 1), (1, 2)), center_joint=1)


@pytest.fixture
def np_rng():
    return np.random.default_rng(7)


# acceptance results, filled by tests/test_acceptance.py and printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
