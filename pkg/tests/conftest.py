from __future__ import annotations

import pytest

from linksched.construction import density_from_measure
from linksched.model import discretize_channel, load_config
from linksched.occupancy_lp import solve_constrained


@pytest.fixture(scope="session")
def paper_cfg():
    return load_config("paper_iv")


@pytest.fixture(scope="session")
def tiny_cfg():
    return load_config("tiny")


@pytest.fixture(scope="session")
def disc16(paper_cfg):
    return discretize_channel(paper_cfg.channel, 16)


@pytest.fixture(scope="session")
def solution16(paper_cfg, disc16):
    """The M=16 constrained optimum at a 3-slot delay budget."""
    sol = solve_constrained(paper_cfg, disc16, 3.0)
    assert sol.status == "optimal"
    return sol


@pytest.fixture(scope="session")
def density16(solution16):
    return density_from_measure(solution16.measure)
