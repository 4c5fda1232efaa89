import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from utilbsde import (Box, CustomGrid, FiniteSet, FullSpace, GeneratedCone, InducedSet, InvalidArgument,
                      NonnegativeOrthantCone, constraint_from_dict, contains, distance, grid_select, project,
                      project_with_pullback)
from utilbsde.constraints import cone_identity_residual, grid_spacing

I1 = [[1.0]]
I2 = np.eye(2)
SIGMA2 = np.array([[1.0, 0.3], [0.2, 0.8]])


def variants():
    return {
        "full": InducedSet(FullSpace(2), SIGMA2),
        "finite": InducedSet(FiniteSet([[0.0, 0.0], [1.0, -1.0], [0.5, 0.5], [-1.0, 0.0]]), SIGMA2),
        "box": InducedSet(Box([-0.5, 0.0], [0.5, 1.0]), SIGMA2),
        "orthant": InducedSet(NonnegativeOrthantCone(2), SIGMA2),
        "cone": InducedSet(GeneratedCone([[1.0, 0.2], [0.1, 1.0]]), SIGMA2),
        "grid": InducedSet(CustomGrid.lattice([-1.0, -1.0], [1.0, 1.0], 0.25), SIGMA2),
    }


VARIANTS = variants()
vec2 = arrays(np.float64, 2, elements=st.floats(-5, 5, allow_nan=False))


# -- examples ------------------------------------------------------------------

def test_distance_examples():
    assert distance([0.7], InducedSet(FullSpace(1), I1)) == 0.0
    assert distance([0.2], InducedSet(FiniteSet([-1.0, 1.0]), I1)) == pytest.approx(0.8)
    assert distance([-1.0, 2.0], InducedSet(NonnegativeOrthantCone(2), I2)) == pytest.approx(1.0)


def test_project_examples():
    np.testing.assert_allclose(project([-1.0, 2.0], InducedSet(NonnegativeOrthantCone(2), I2)), [0.0, 2.0])
    assert project([0.0], InducedSet(FiniteSet([1.0, -1.0]), I1))[0] == -1.0
    assert project([0.8], InducedSet(Box([0.0], [0.5]), I1))[0] == pytest.approx(0.5)


def test_pullback_maps_to_image():
    s = VARIANTS["box"]
    a = np.random.default_rng(0).normal(size=(50, 2))
    img, pull = project_with_pullback(a, s)
    np.testing.assert_allclose(pull @ s.sigma, img, atol=1e-12)


def test_rejects_non_finite():
    with pytest.raises(InvalidArgument):
        project([np.nan], InducedSet(FullSpace(1), I1))
    with pytest.raises(InvalidArgument):
        distance(np.ones(3), VARIANTS["box"])


def test_custom_grid_tie_takes_first_enumerated():
    s = InducedSet(CustomGrid([[1.0], [-1.0]]), I1)
    assert project([0.0], s)[0] == 1.0


def test_constraint_from_dict_roundtrip():
    for v in VARIANTS.values():
        rebuilt = constraint_from_dict(v.base.to_dict())
        np.testing.assert_array_equal(project([0.3, -0.2], InducedSet(rebuilt, SIGMA2)), project([0.3, -0.2], v))


def test_cone_identity_examples():
    orth = InducedSet(NonnegativeOrthantCone(2), I2)
    assert cone_identity_residual([-1.0, 2.0], orth) == 0.0
    assert cone_identity_residual([0.5, 2.0], orth) == 0.0
    ray = InducedSet(GeneratedCone([[1.0, 2.0]]), I2)
    assert abs(cone_identity_residual([-1.0, -2.0], ray)) < 1e-14
    with pytest.raises(InvalidArgument):
        cone_identity_residual([0.1, 0.1], VARIANTS["box"])


# -- properties ----------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(VARIANTS))
@settings(max_examples=200, deadline=None)
@given(a=vec2, b=vec2)
def test_distance_nonexpansive(name, a, b):
    s = VARIANTS[name]
    assert abs(distance(a, s) - distance(b, s)) <= np.linalg.norm(a - b) + 1e-9


@pytest.mark.parametrize("name", sorted(VARIANTS))
@settings(max_examples=200, deadline=None)
@given(a=vec2)
def test_projection_membership_and_distance(name, a):
    s = VARIANTS[name]
    p = project(a, s)
    assert contains(p, s, tol=1e-8)
    assert np.linalg.norm(a - p) == pytest.approx(distance(a, s), abs=1e-9)


@pytest.mark.parametrize("name", sorted(VARIANTS))
@settings(max_examples=100, deadline=None)
@given(a=vec2, seed=st.integers(0, 2**31))
def test_projection_beats_samples(name, a, seed):
    s = VARIANTS[name]
    pts = s.sample(np.random.default_rng(seed), 64)
    assert distance(a, s) <= np.min(np.linalg.norm(pts - a, axis=1)) + 1e-9


@pytest.mark.parametrize("name", sorted(VARIANTS))
@settings(max_examples=100, deadline=None)
@given(a=vec2)
def test_projection_deterministic(name, a):
    s = VARIANTS[name]
    assert project(a, s).tobytes() == project(a.copy(), s).tobytes()


@settings(max_examples=200, deadline=None)
@given(a=st.floats(-3, 3))
def test_finite_tie_break_is_lexicographic(a):
    s = InducedSet(FiniteSet([a + 1.0, a - 1.0]), I1)
    assert project([a], s)[0] == a - 1.0


def test_batch_matches_rowwise():
    s = VARIANTS["cone"]
    A = np.random.default_rng(1).normal(size=(20, 2))
    batch = project(A, s)
    for row, p in zip(A, batch):
        np.testing.assert_allclose(project(row, s), p, atol=1e-12)


# -- grid selection ------------------------------------------------------------

def test_grid_select_examples():
    s = InducedSet(FiniteSet([0.33]), I1)
    assert abs(grid_select([0.0], s, 100)[0] - 0.33) <= 0.01 + 1e-12
    box = InducedSet(Box([0.0], [1.0]), I1)
    for n in (3, 10, 57):
        assert abs(grid_select([0.4], box, n)[0] - 0.4) <= 1.0 / n + 1e-12


def test_grid_select_rate_and_sequence():
    s = VARIANTS["box"]
    a = np.array([2.0, -1.5])
    dist = distance(a, s)
    for n in (10, 100, 1000):
        g = grid_select(a, s, n)
        assert abs(np.linalg.norm(a - g) - dist) <= 2.0 / n
        assert distance(g, s) <= 1.0 / n + 1e-12


def test_grid_select_needs_radius_for_unbounded():
    with pytest.raises(InvalidArgument):
        grid_select([0.1, 0.1], VARIANTS["orthant"], 10)
    g = grid_select([0.1, 0.1], VARIANTS["orthant"], 10, radius=5.0)
    assert g.shape == (2,)


def test_grid_spacing_covers():
    for n in (1, 7, 100):
        for m in (1, 2, 3):
            assert grid_spacing(n, m) * np.sqrt(m) / 2 <= 1.0 / n + 1e-15


def test_induced_set_validation():
    with pytest.raises(InvalidArgument):
        InducedSet(FullSpace(2), [[1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(InvalidArgument):
        InducedSet(FullSpace(2), [[1.0]])
    with pytest.raises(InvalidArgument):
        FiniteSet([]).points
