import itertools

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import norm

from warpmix.curves import Curve, CurveSet
from warpmix.evaluate import heldout_logp
from warpmix.inference import (
    EnumerationLimitError,
    brute_force_loglik,
    build_lattice,
    component_posterior,
    conditional_curve_loglik,
    curve_loglik,
    cutset_posterior,
    emission_logdensity,
    enumerate_paths,
    forward_backward,
    viterbi_align,
)
from warpmix.model import WarpMixtureModel, permute_components
from warpmix.offset import GridOverrunError, optimal_offset


def random_instance(rng, make_model):
    k = int(rng.integers(1, 4))
    m = int(rng.integers(1, 4))
    s = int(rng.integers(0, 2))
    d = int(rng.integers(1, 3))
    length = int(rng.integers(1, 5))
    t = m - 1 + length + int(rng.integers(0, 3))
    model = make_model(
        rng,
        k,
        m,
        s,
        t,
        d,
        allow_stay=bool(rng.integers(2)),
        offsets_enabled=bool(rng.integers(2)),
        tie_transitions=bool(rng.integers(2)),
    )
    return model, Curve("c", rng.normal(size=(length, d)))


def path_joint(curve, model, k, g1, path) -> float:
    y = curve.points - optimal_offset(curve, model, k, g1).delta
    total = model.log_weights[k] + model.log_init[k, g1]
    for previous, current in zip(path, path[1:]):
        total += model.log_transitions[k, previous, current - previous]
    for j, position in enumerate(path):
        total += emission_logdensity(y[j], model.means[k, position], model.variances[k, position])
    return float(total)


def all_paths(model, length, g1):
    for moves in itertools.product(range(model.min_step, model.n_steps), repeat=length - 1):
        path = [g1]
        for o in moves:
            path.append(path[-1] + o)
        if path[-1] <= model.t - 1:
            yield tuple(path)


def test_emission_standard_normal_mode():
    assert emission_logdensity([0.0], [0.0], [1.0]) == pytest.approx(-0.9189385, abs=1e-7)


def test_emission_zero_residual():
    var = np.array([0.5, 3.0])
    expected = -0.5 * np.sum(np.log(2 * np.pi * var))
    assert emission_logdensity([1.0, 2.0], [1.0, 2.0], var) == pytest.approx(expected)


def test_emission_sums_dimensions():
    assert emission_logdensity([1.0, -1.0], [0.0, 0.0], [1.0, 4.0]) == pytest.approx(
        -3.1560, abs=1e-4
    )


@pytest.mark.parametrize("var", [[0.0], [-1.0], [np.nan]])
def test_emission_rejects_bad_variance(var):
    with pytest.raises(ValueError):
        emission_logdensity([0.0], [0.0], var)


def test_single_emission_loglik(unit_model):
    curve = Curve("c", [0.0])
    assert conditional_curve_loglik(curve, unit_model, 0, 0) == pytest.approx(-0.9189385)
    assert brute_force_loglik(curve, unit_model) == pytest.approx(-0.9189385)


def test_linear_loglik_follows_the_only_path(rng, make_model):
    model = make_model(rng, k=2, m=3, s=0, t=7, d=2, offsets_enabled=True)
    curve = Curve("c", rng.normal(size=(5, 2)))
    for k in range(2):
        for g1 in range(3):
            delta = optimal_offset(curve, model, k, g1).delta
            expected = sum(
                emission_logdensity(
                    curve.points[j] - delta, model.means[k, g1 + j], model.variances[k, g1 + j]
                )
                for j in range(5)
            )
            loglik = conditional_curve_loglik(curve, model, k, g1)
            assert loglik == pytest.approx(expected, rel=1e-12)
    assert brute_force_loglik(curve, model) == pytest.approx(curve_loglik(curve, model), rel=1e-12)


def test_tiny_warped_instance(rng, make_model):
    model = make_model(rng, k=1, m=1, s=1, t=4, d=1, allow_stay=True)
    curve = Curve("c", [0.3, -0.2])
    assert curve_loglik(curve, model) == pytest.approx(brute_force_loglik(curve, model), rel=1e-10)


def test_matches_enumeration_on_random_instances(rng, make_model):
    for _ in range(500):
        model, curve = random_instance(rng, make_model)
        oracle = enumerate_paths(curve, model)
        lattice = build_lattice(curve, model)

        assert lattice.log_evidence == pytest.approx(oracle.log_evidence, rel=1e-10)
        np.testing.assert_allclose(lattice.cutset, oracle.cutset, atol=1e-10)
        np.testing.assert_allclose(lattice.expected_steps, oracle.steps, atol=1e-10)
        for k in range(model.k):
            for g1 in range(model.m):
                np.testing.assert_allclose(
                    lattice.grid_gamma(k, g1), oracle.occupancy[k, g1], atol=1e-10
                )


def test_degenerate_configuration_is_a_gaussian_mixture(rng, make_model):
    model = make_model(rng, k=3, m=1, s=0, t=6, d=2)
    for i in range(100):
        length = int(rng.integers(1, 7))
        curve = Curve(f"c{i}", rng.normal(size=(length, 2)))
        # trailing grid positions the curve never reaches are missing values
        terms = [
            np.log(model.weights[k])
            + norm.logpdf(
                curve.points,
                loc=model.means[k, :length],
                scale=np.sqrt(model.variances[k, :length]),
            ).sum()
            for k in range(model.k)
        ]
        assert curve_loglik(curve, model) == pytest.approx(logsumexp(terms), rel=1e-12)


def test_duplicated_component_leaves_loglik_unchanged(rng, make_model):
    model = make_model(rng, k=2, m=2, s=1, t=6, d=1, allow_stay=True)
    curve = Curve("c", rng.normal(size=(4, 1)))
    split = WarpMixtureModel(
        weights=np.array([model.weights[0], model.weights[1] / 2, model.weights[1] / 2]),
        init=model.init[[0, 1, 1]],
        steps=model.steps[[0, 1, 1]],
        means=model.means[[0, 1, 1]],
        variances=model.variances[[0, 1, 1]],
        allow_stay=True,
    )
    assert curve_loglik(curve, split) == pytest.approx(curve_loglik(curve, model), rel=1e-12)


def test_cutset_single_value(unit_model):
    posterior = cutset_posterior(Curve("c", [1.0]), unit_model)
    np.testing.assert_allclose(posterior.table, [[1.0]])


def test_cutset_symmetric_for_identical_components(rng, make_model):
    base = make_model(rng, k=1, m=2, s=0, t=5, d=1)
    twins = WarpMixtureModel(
        weights=np.array([0.5, 0.5]),
        init=np.tile(base.init, (2, 1)),
        steps=np.tile(base.steps, (2, 1)),
        means=np.tile(base.means, (2, 1, 1)),
        variances=np.tile(base.variances, (2, 1, 1)),
    )
    table = cutset_posterior(Curve("c", [0.1, 0.4, -0.3]), twins).table
    np.testing.assert_allclose(table[0], table[1])
    assert table.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(component_posterior(Curve("c", [0.0]), twins), [0.5, 0.5])


def test_linear_occupancy_is_a_point_mass(rng, make_model):
    model = make_model(rng, k=1, m=2, s=0, t=5, d=1)
    occupancies, loglik = forward_backward(Curve("c", [0.0, 1.0, 2.0]), model, 0, 1)
    expected = np.zeros((3, 5))
    expected[[0, 1, 2], [1, 2, 3]] = 1.0
    np.testing.assert_allclose(occupancies.gamma, expected, atol=1e-12)
    np.testing.assert_allclose(occupancies.xi, [0.0, 2.0], atol=1e-12)
    curve = Curve("c", [0.0, 1.0, 2.0])
    assert loglik == pytest.approx(conditional_curve_loglik(curve, model, 0, 1))


def test_occupancy_rows_are_distributions(rng, make_model):
    model = make_model(rng, k=2, m=2, s=2, t=12, d=2, allow_stay=True, tie_transitions=False)
    curve = Curve("c", rng.normal(size=(6, 2)))
    occupancies, _ = forward_backward(curve, model, 1, 1)
    np.testing.assert_allclose(occupancies.gamma.sum(axis=1), 1.0, rtol=1e-10)
    assert occupancies.xi.shape == (12, 4)
    assert occupancies.xi.sum() == pytest.approx(5.0)


def test_viterbi_linear_path(rng, make_model):
    model = make_model(rng, k=1, m=1, s=0, t=6, d=1)
    alignment = viterbi_align(Curve("c", rng.normal(size=6)), model)
    assert alignment.path == tuple(range(6))
    assert alignment.start == 0


def test_viterbi_recovers_start():
    grid = np.arange(6, dtype=np.float64)
    means = np.stack([grid, 10.0 + grid])[:, :, None]
    model = WarpMixtureModel(
        weights=np.array([0.5, 0.5]),
        init=np.full((2, 3), 1 / 3),
        steps=np.array([[0.0, 1.0], [0.0, 1.0]]),
        means=means,
        variances=np.full_like(means, 0.01),
    )
    alignment = viterbi_align(Curve("c", means[1, 2:6, 0]), model)
    assert (alignment.component, alignment.start) == (1, 2)
    assert alignment.path == (2, 3, 4, 5)


def test_viterbi_tie_break():
    length, m, s = 4, 2, 1
    t = m + (length - 1) * (s + 1) + 2
    model = WarpMixtureModel(
        weights=np.array([0.5, 0.5]),
        init=np.full((2, m), 1 / m),
        steps=np.full((2, s + 2), 1 / (s + 2)),
        means=np.zeros((2, t, 1)),
        variances=np.ones((2, t, 1)),
        allow_stay=True,
    )
    alignment = viterbi_align(Curve("c", np.zeros(length)), model)
    assert alignment.component == 0
    assert alignment.start == 0
    assert alignment.path == (0,) * length


def test_viterbi_matches_exhaustive_search(rng, make_model):
    for _ in range(100):
        model, curve = random_instance(rng, make_model)
        alignment = viterbi_align(curve, model)
        best = max(
            path_joint(curve, model, k, g1, path)
            for k in range(model.k)
            for g1 in range(model.m)
            for path in all_paths(model, curve.length, g1)
        )
        assert alignment.log_joint == pytest.approx(best, rel=1e-10)
        assert path_joint(
            curve, model, alignment.component, alignment.start, alignment.path
        ) == pytest.approx(best, rel=1e-10)


def test_offsets_make_scores_translation_invariant(rng, make_model):
    model = make_model(rng, k=2, m=3, s=1, t=12, d=2, allow_stay=True, offsets_enabled=True)
    curves = tuple(Curve(f"c{i}", rng.normal(size=(int(rng.integers(2, 8)), 2))) for i in range(10))
    data = CurveSet(curves)
    shift = rng.uniform(-100.0, 100.0, size=2)
    moved = CurveSet(tuple(curve.translate(shift) for curve in curves))

    assert heldout_logp(model, moved) == pytest.approx(heldout_logp(model, data), abs=1e-8)
    for curve, other in zip(data, moved):
        before, after = viterbi_align(curve, model), viterbi_align(other, model)
        assert (before.component, before.start, before.path) == (
            after.component,
            after.start,
            after.path,
        )
        np.testing.assert_allclose(after.offset - before.offset, shift, rtol=1e-10, atol=1e-9)


def test_enumeration_limit(rng, make_model):
    model = make_model(rng, k=2, m=2, s=1, t=12, d=1, allow_stay=True)
    with pytest.raises(EnumerationLimitError):
        enumerate_paths(Curve("c", np.zeros(8)), model, limit=100)


def test_lattice_rejects_dimension_mismatch(unit_model):
    with pytest.raises(ValueError, match="D=2"):
        build_lattice(Curve("c", np.zeros((1, 2))), unit_model)


def test_curves_longer_than_the_grid_are_rejected():
    model = WarpMixtureModel(
        weights=np.array([1.0]),
        init=np.array([[1.0]]),
        steps=np.array([[0.0, 1.0]]),
        means=np.zeros((1, 5, 1)),
        variances=np.ones((1, 5, 1)),
    )
    curve = Curve("long", np.zeros(7))
    with pytest.raises(GridOverrunError, match="overruns the grid"):
        curve_loglik(curve, model)
    with pytest.raises(GridOverrunError):
        viterbi_align(curve, model)
    assert np.isfinite(curve_loglik(Curve("fits", np.zeros(5)), model))


@pytest.mark.parametrize("offsets_enabled, tie_transitions", [(False, True), (True, False)])
def test_scores_ignore_component_labels(rng, make_model, offsets_enabled, tie_transitions):
    model = make_model(
        rng,
        k=3,
        m=2,
        s=1,
        t=9,
        d=2,
        allow_stay=True,
        offsets_enabled=offsets_enabled,
        tie_transitions=tie_transitions,
    )
    relabelled = permute_components(model, [2, 0, 1])
    data = CurveSet(
        tuple(Curve(f"c{i}", rng.normal(size=(int(rng.integers(1, 7)), 2))) for i in range(6))
    )
    for curve in data:
        assert curve_loglik(curve, relabelled) == pytest.approx(
            curve_loglik(curve, model), rel=1e-12
        )
    assert heldout_logp(relabelled, data) == pytest.approx(heldout_logp(model, data), rel=1e-12)
