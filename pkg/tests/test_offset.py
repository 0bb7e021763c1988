import numpy as np
import pytest

from warpmix.curves import Curve
from warpmix.model import WarpMixtureModel
from warpmix.offset import GridOverrunError, offset_table, optimal_offset


def line_model(segment, offsets_enabled=True) -> WarpMixtureModel:
    means = np.asarray(segment, dtype=np.float64).reshape(1, -1, 1)
    return WarpMixtureModel(
        weights=np.array([1.0]),
        init=np.array([[1.0]]),
        steps=np.array([[0.0, 1.0]]),
        means=means,
        variances=np.ones_like(means),
        offsets_enabled=offsets_enabled,
    )


@pytest.mark.parametrize(
    "values, segment, expected",
    [
        ([2.0, 3.0, 4.0], [1.0, 2.0, 3.0], 1.0),
        ([1.0, 2.0], [1.0, 2.0], 0.0),
        ([0.0, 3.0], [1.0, 1.0], 0.5),
    ],
)
def test_optimal_offset_is_mean_difference(values, segment, expected):
    result = optimal_offset(Curve("c", values), line_model(segment), 0, 0)
    assert result.delta[0] == pytest.approx(expected)


def test_optimal_offset_minimizes_squared_error():
    curve = Curve("c", [0.0, 3.0])
    model = line_model([1.0, 1.0])
    result = optimal_offset(curve, model, 0, 0)
    grid = np.linspace(-2.0, 3.0, 5001)
    sse = [np.sum((curve.points[:, 0] - 1.0 - delta) ** 2) for delta in grid]
    assert grid[int(np.argmin(sse))] == pytest.approx(result.delta[0], abs=1e-3)
    assert result.residual_ss == pytest.approx(min(sse), abs=1e-6)


def test_disabled_offsets_are_zero():
    result = optimal_offset(Curve("c", [2.0, 3.0]), line_model([1.0, 2.0], False), 0, 0)
    np.testing.assert_array_equal(result.delta, [0.0])
    assert result.residual_ss == pytest.approx(2.0)


def test_offset_segment_must_fit_the_grid():
    with pytest.raises(GridOverrunError):
        optimal_offset(Curve("c", [1.0, 2.0, 3.0]), line_model([0.0, 0.0]), 0, 0)


def test_offset_table_matches_pairwise_offsets(rng, make_model):
    model = make_model(rng, k=2, m=3, s=1, t=7, d=2, offsets_enabled=True)
    curve = Curve("c", rng.normal(size=(4, 2)))
    table = offset_table(curve, model)
    assert table.shape == (2, 3, 2)
    for k in range(2):
        for g1 in range(3):
            np.testing.assert_allclose(table[k, g1], optimal_offset(curve, model, k, g1).delta)


def test_offset_table_rejects_curves_longer_than_grid(rng, make_model):
    model = make_model(rng, k=1, m=2, s=0, t=4, d=1, offsets_enabled=True)
    with pytest.raises(GridOverrunError):
        offset_table(Curve("c", np.zeros(4)), model)
