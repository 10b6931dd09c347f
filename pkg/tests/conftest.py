from __future__ import annotations

import numpy as np
import pytest

from lrep import Kernel, SiteSpace


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def nn_segment(radius: int, p: float, boundary: str = "open-escape") -> Kernel:
    return Kernel.nearest_neighbor(SiteSpace.centered(radius, boundary), p)


def config_on(space: SiteSpace, occupied) -> np.ndarray:
    """0/1 vector with the given coordinates occupied."""
    eta = np.zeros(space.size, dtype=np.uint8)
    for c in occupied:
        eta[space.index(c)] = 1
    return eta
