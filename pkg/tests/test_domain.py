import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rosgd.domain import Ball, Box, as_point, box, diameter, domain_from_dict, euclidean_ball, project, project_rows

coords = arrays(np.float64, 3, elements=st.floats(-10, 10, allow_nan=False))
DOMAINS = [
    euclidean_ball(3, 1.0),
    euclidean_ball(3, 0.5, center=[0.2, -0.1, 0.3]),
    box([-1, -2, 0], [1, 0.5, 3]),
]


def test_ball_projection_examples():
    ball = euclidean_ball(2)
    np.testing.assert_array_equal(project(ball, [0.3, 0.4]), [0.3, 0.4])
    np.testing.assert_allclose(project(ball, [3.0, 4.0]), [0.6, 0.8], atol=1e-15)


def test_box_projection_example():
    np.testing.assert_array_equal(project(box([-1, -1], [1, 1]), [2.0, -0.5]), [1.0, -0.5])


def test_diameter_examples():
    assert diameter(euclidean_ball(2, 1.0)) == 2.0
    assert diameter(euclidean_ball(2, 0.5)) == 1.0
    assert diameter(box([-1, -1], [1, 1])) == pytest.approx(2.8284271247, abs=1e-10)


@pytest.mark.parametrize("dom", DOMAINS, ids=repr)
@settings(max_examples=200, deadline=None)
@given(x=coords)
def test_projection_idempotent_and_feasible(dom, x):
    p = project(dom, x)
    assert dom.contains(p)
    np.testing.assert_array_equal(project(dom, p), p)


@pytest.mark.parametrize("dom", DOMAINS, ids=repr)
@settings(max_examples=200, deadline=None)
@given(x=coords, y=coords)
def test_projection_nonexpansive_towards_feasible_points(dom, x, y):
    w = project(dom, y)
    assert np.linalg.norm(project(dom, x) - w) <= np.linalg.norm(x - w) + 1e-12


@pytest.mark.parametrize("dom", DOMAINS, ids=repr)
def test_interior_points_fixed(dom, rng):
    for _ in range(100):
        x = project(dom, rng.uniform(-3, 3, size=3))
        x = dom.midpoint + 0.9 * (x - dom.midpoint)
        np.testing.assert_array_equal(project(dom, x), x)


@pytest.mark.parametrize("dom", DOMAINS, ids=repr)
def test_projection_is_argmin(dom, rng):
    # brute force: no sampled feasible point is closer than the projection
    x = rng.uniform(-4, 4, size=3)
    p = project(dom, x)
    cand = project_rows(dom, rng.uniform(-4, 4, size=(20000, 3)))
    assert np.linalg.norm(x - p) <= np.min(np.linalg.norm(cand - x, axis=1)) + 1e-12


@pytest.mark.parametrize("dom", DOMAINS, ids=repr)
def test_project_rows_matches_project(dom, rng):
    X = rng.uniform(-3, 3, size=(50, 3))
    np.testing.assert_allclose(project_rows(dom, X), np.array([project(dom, x) for x in X]), atol=1e-15)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError, match="dimension mismatch"):
        project(euclidean_ball(2), [1.0, 2.0, 3.0])


def test_invalid_domains_rejected():
    with pytest.raises(ValueError):
        Ball(np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        Box(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        as_point([np.nan, 0.0])


def test_max_norm_and_diameter_box():
    b = box([-1, -2], [3, 1])
    assert b.max_norm() == pytest.approx(math.hypot(3, 2))
    assert diameter(b) == pytest.approx(math.hypot(4, 3))


@pytest.mark.parametrize("dom", DOMAINS, ids=repr)
def test_dict_round_trip(dom):
    assert domain_from_dict(dom.to_dict()) == dom
