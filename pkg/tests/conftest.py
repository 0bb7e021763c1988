import numpy as np
import pytest

from warpmix.curves import Curve, CurveSet
from warpmix.model import WarpMixtureModel


def random_model(
    rng: np.random.Generator,
    k: int,
    m: int,
    s: int,
    t: int,
    d: int,
    allow_stay: bool = False,
    offsets_enabled: bool = False,
    tie_transitions: bool = True,
) -> WarpMixtureModel:
    n = s + 2
    shape = (k,) if tie_transitions else (k, t)
    steps = rng.dirichlet(np.ones(n), size=shape)
    if not allow_stay:
        steps[..., 0] = 0.0
        steps /= steps.sum(axis=-1, keepdims=True)
    return WarpMixtureModel(
        weights=rng.dirichlet(np.ones(k)),
        init=rng.dirichlet(np.ones(m), size=k),
        steps=steps,
        means=rng.normal(size=(k, t, d)),
        variances=rng.uniform(0.5, 2.0, size=(k, t, d)),
        allow_stay=allow_stay,
        offsets_enabled=offsets_enabled,
        tie_transitions=tie_transitions,
    )


def random_curves(rng: np.random.Generator, n: int, lengths: tuple[int, int], d: int) -> CurveSet:
    curves = []
    for i in range(n):
        length = int(rng.integers(lengths[0], lengths[1] + 1))
        curves.append(Curve(f"c{i}", rng.normal(size=(length, d))))
    return CurveSet(tuple(curves))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def make_model():
    return random_model


@pytest.fixture
def make_curves():
    return random_curves


@pytest.fixture
def unit_model() -> WarpMixtureModel:
    """K=1, M=1, linear, one grid position with a standard normal emission."""
    return WarpMixtureModel(
        weights=np.array([1.0]),
        init=np.array([[1.0]]),
        steps=np.array([[0.0, 1.0]]),
        means=np.zeros((1, 1, 1)),
        variances=np.ones((1, 1, 1)),
    )
