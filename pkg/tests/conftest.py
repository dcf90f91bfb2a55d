import numpy as np
import pytest

from thirdmedium.config import load_run_config
from thirdmedium.material import MediumParams, SolidParams
from thirdmedium.mesh import load_mesh

SOLID = SolidParams(K=20.0, mu=10.0, k_theta=100.0, alpha_t=1e-3, theta0=20.0)
MEDIUM = MediumParams(gamma=1e-4, k_tm=1.0, k_cap=100.0, alpha_tm=1e-3, theta0=20.0)

# two Q1 elements stacked in y: medium below, solid above
TWO_ELEMENTS = """\
dim 2
node 0 0 0
node 1 1 0
node 2 1 1
node 3 0 1
node 4 1 2
node 5 0 2
region gas third_medium
region body solid
element 0 Q1 gas 0 1 2 3
element 1 Q1 body 3 2 4 5
nodeset bottom 0 1
nodeset middle 3 2
nodeset top 5 4
"""

ONE_SOLID = """\
dim 2
node 0 0 0
node 1 1 0
node 2 1 1
node 3 0 1
region body solid
element 0 Q1 body 0 1 2 3
nodeset bottom 0 1
nodeset top 2 3
"""


@pytest.fixture
def two_elements():
    return load_mesh(TWO_ELEMENTS)


@pytest.fixture
def one_solid():
    return load_mesh(ONE_SOLID)


def small_block(*overrides):
    """Coarse block-on-medium run, small enough for unit tests."""
    base = [
        "problem.mesh_params={nx: 4, ny_solid: 4, ny_medium: 2, element: Q1}",
        "output.profiles=[]",
        "output.snapshots=[]",
        "load.stops=[]",
    ]
    return load_run_config(preset="block2d", overrides=base + list(overrides))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated at the end of the terminal report
ACCEPTANCE = []


def report(criterion, ok, detail):
    ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
    print(ACCEPTANCE[-1])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
