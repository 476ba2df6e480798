from __future__ import annotations

import numpy as np
import pytest

from sdcrk import NodeFamily, collocation_method


@pytest.fixture(scope="session")
def radau3():
    return collocation_method(NodeFamily("radau", 3))


@pytest.fixture(scope="session")
def radau2():
    return collocation_method(NodeFamily("radau", 2))


@pytest.fixture(scope="session")
def gauss2():
    return collocation_method(NodeFamily("gauss", 2))


@pytest.fixture(scope="session")
def gauss3():
    return collocation_method(NodeFamily("gauss", 3))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
