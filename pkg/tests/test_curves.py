import numpy as np
import pytest

from warpmix.curves import Curve, CurveSet, anchor_curves


def test_curve_promotes_vectors_to_columns():
    curve = Curve("a", [1.0, 2.0, 3.0])
    assert curve.points.shape == (3, 1)
    assert curve.length == 3
    assert curve.dims == 1


def test_curve_is_read_only():
    curve = Curve("a", np.zeros((2, 2)))
    with pytest.raises(ValueError):
        curve.points[0, 0] = 1.0


@pytest.mark.parametrize("points", [[], [[np.nan, 1.0]], [[np.inf]]])
def test_curve_rejects_bad_points(points):
    with pytest.raises(ValueError):
        Curve("bad", points)


def test_curve_set_requires_consistent_dims():
    with pytest.raises(ValueError, match="dimensionality"):
        CurveSet((Curve("a", np.zeros((2, 1))), Curve("b", np.zeros((2, 2)))))


def test_curve_set_summary():
    data = CurveSet((Curve("a", np.zeros((2, 3))), Curve("b", np.ones((5, 3)))))
    assert len(data) == 2
    assert data.dims == 3
    assert data.l_max == 5
    assert data.n_measurements == 21
    assert [curve.id for curve in data.subset([1])] == ["b"]
    np.testing.assert_allclose(data.global_mean(), np.full(3, 5 / 7))


def test_anchor_none_is_identity():
    data = CurveSet((Curve("a", [[1.0], [2.0]]),))
    assert anchor_curves(data, "none") is data


def test_anchor_first_starts_at_origin():
    data = CurveSet((Curve("a", [[1.0, 5.0], [3.0, 2.0]]),))
    anchored = anchor_curves(data, "first")
    np.testing.assert_array_equal(anchored[0].points, [[0.0, 0.0], [2.0, -3.0]])


def test_anchor_mean_centers_each_curve():
    data = CurveSet((Curve("a", [[1.0], [3.0]]), Curve("b", [[10.0], [10.0], [13.0]])))
    anchored = anchor_curves(data, "mean")
    for curve in anchored:
        np.testing.assert_allclose(curve.points.mean(axis=0), 0.0, atol=1e-12)
