import numpy as np
import pytest

from app.schemas.space import InputDistribution, SpaceConfig
from app.services.measures import DiscreteOperatorMeasure, random_measure


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def space():
    return SpaceConfig(d=2, k=2)


@pytest.fixture
def space_inf():
    return SpaceConfig(d=2, k=2, p_Y="inf")


@pytest.fixture
def gaussian():
    return InputDistribution()


@pytest.fixture
def two_atom(space, rng) -> DiscreteOperatorMeasure:
    """One positive and one negative unit-norm atom, well separated"""
    return random_measure(space, 2, rng, separation=0.8)


@pytest.fixture
def single_atom(space) -> DiscreteOperatorMeasure:
    matrix = np.array([[0.6, 0.0, 0.2], [0.0, -0.5, 0.3]])
    return DiscreteOperatorMeasure(space, [1.5], matrix[None])
