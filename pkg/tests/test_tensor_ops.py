import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evoattack.tensor_ops import (
    ShapeMismatchError,
    as_image,
    l2_dist,
    linf_dist,
    parse_eps,
    project_feasible,
)


def _scan_linf(a, b):
    best = 0.0
    for u, v in zip(np.ravel(a).tolist(), np.ravel(b).tolist()):
        best = max(best, abs(u - v))
    return best


def _naive_l2(a, b):
    total = 0.0
    for u, v in zip(np.ravel(a).tolist(), np.ravel(b).tolist()):
        total += (u - v) * (u - v)
    return math.sqrt(total)


def test_linf_identity_and_single_element():
    a = np.full((1, 3, 3), 0.5)
    assert linf_dist(a, a) == 0.0
    b = a.copy()
    b[0, 1, 2] = 0.9
    assert linf_dist(a, b) == pytest.approx(0.4, abs=1e-15)


def test_l2_three_four_five():
    a = np.zeros((2, 2, 2))
    b = a.copy()
    b[0, 0, 0] = 0.3
    b[1, 1, 0] = 0.4
    assert l2_dist(a, a) == 0.0
    assert l2_dist(a, b) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_distances_match_scalar_oracles(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((3, 7, 5)), rng.random((3, 7, 5))
    assert linf_dist(a, b) == _scan_linf(a, b)
    assert linf_dist(a, b) == linf_dist(b, a)
    assert l2_dist(a, b) == pytest.approx(_naive_l2(a, b), abs=1e-9)


def test_shape_mismatch_raises():
    with pytest.raises(ShapeMismatchError):
        linf_dist(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))
    with pytest.raises(ShapeMismatchError):
        l2_dist(np.zeros((1, 2, 2)), np.zeros((2, 2, 2)))
    with pytest.raises(ShapeMismatchError):
        project_feasible(np.zeros((1, 2, 2)), np.zeros((1, 4)), 0.1)


def test_projection_examples():
    origin = np.full((1, 1, 2), 0.5)
    assert np.array_equal(project_feasible(origin, origin, 0.1), origin)
    out = project_feasible(np.array([[[0.75, 0.5]]]), origin, 0.1)
    assert out[0, 0, 0] == pytest.approx(0.6)
    out = project_feasible(np.array([[[-0.3]]]), np.array([[[0.02]]]), 0.1)
    assert out[0, 0, 0] == 0.0


images = st.integers(1, 3).flatmap(
    lambda c: st.tuples(st.integers(1, 6), st.integers(1, 6)).map(lambda hw: (c, *hw))
)


@settings(max_examples=200, deadline=None)
@given(shape=images, seed=st.integers(0, 2**32 - 1), eps=st.floats(0.0, 1.0))
def test_projection_is_feasible_and_idempotent(shape, seed, eps):
    rng = np.random.default_rng(seed)
    origin = rng.random(shape)
    cand = rng.normal(0.5, 1.0, size=shape)
    out = project_feasible(cand, origin, eps)
    assert linf_dist(out, origin) <= eps + 1e-12
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.array_equal(project_feasible(out, origin, eps), out)


@settings(max_examples=100, deadline=None)
@given(shape=images, seed=st.integers(0, 2**32 - 1), eps=st.floats(0.01, 0.5))
def test_projection_leaves_feasible_points_alone(shape, seed, eps):
    rng = np.random.default_rng(seed)
    origin = rng.random(shape)
    cand = np.clip(origin + rng.uniform(-eps, eps, size=shape), 0, 1)
    assert np.array_equal(project_feasible(cand, origin, eps), cand)


def test_as_image_validates():
    img = as_image(np.linspace(0, 1, 12), shape=(3, 2, 2))
    assert img.shape == (3, 2, 2)
    # channel-major: channel 0 holds the first h*w values
    assert np.array_equal(img[0].ravel(), np.linspace(0, 1, 12)[:4])
    with pytest.raises(ValueError):
        as_image(np.full((1, 2, 2), 1.5))
    with pytest.raises(ShapeMismatchError):
        as_image(np.zeros(5), shape=(1, 2, 2))
    with pytest.raises(ShapeMismatchError):
        as_image(np.zeros((4, 4)))


@pytest.mark.parametrize("text,value", [("60/255", 60 / 255), ("0.1", 0.1), (0.25, 0.25), ("0/255", 0.0)])
def test_parse_eps(text, value):
    assert parse_eps(text) == pytest.approx(value, abs=1e-15)


def test_parse_eps_rejects_out_of_range():
    with pytest.raises(ValueError):
        parse_eps("300/255")
