import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cases import build_rev_lattice, build_two_scale_case


@pytest.fixture(scope="session")
def two_scale():
    return build_two_scale_case(seed=7)


@pytest.fixture(scope="session")
def uniform_case():
    return build_two_scale_case(seed=7, uniform=True)


@pytest.fixture(scope="session")
def rev_lattice():
    return build_rev_lattice()
