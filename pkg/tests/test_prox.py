import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from invdiff import oracles, prox
from invdiff.prox import (
    apply_prox_stack,
    positive_part,
    project_ball,
    project_ellipsoid,
    prox_conjugate,
    prox_nonneg_group_ball,
    prox_nonneg_group_weighted,
    regularizer_value,
)
from invdiff.tensorio import PsdrStack, SigmaGrid

# frozen outputs of tests/derivations/prox_values.py
ELLIPSOID_PG = [0.7211101184471919, 1.385640930505558]
WEIGHTED_SUBGRADIENT = [0.8613573039185769, 0.608333891287049, 0.2796939182566497]
BALL_X5 = [-0.35966845567139044, 1.2036751014877107, 1.3968681196180939, 0.31723592758455404, 0.41413419203577684]
BALL_GRID_POLISH = [0.0, 0.7639887660464952, 0.8866109716627867, 0.20135390632253714, 0.2628565378400901]

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def cases(draw, max_dim=16):
    n = draw(st.integers(1, max_dim))
    x = draw(arrays(np.float64, n, elements=finite))
    xi = draw(arrays(np.float64, n, elements=st.floats(0.2, 5.0)))
    gamma = draw(st.floats(0.01, 5.0))
    return x, xi, gamma


def test_project_ball_examples():
    np.testing.assert_array_equal(project_ball(np.array([3.0, 4.0]), 10.0), [3.0, 4.0])
    np.testing.assert_allclose(project_ball(np.array([3.0, 4.0]), 2.5), [1.5, 2.0], rtol=1e-15)
    np.testing.assert_array_equal(project_ball(np.zeros(3), 1.0), np.zeros(3))
    with pytest.raises(ValueError):
        project_ball(np.ones(2), 0.0)


def test_project_ellipsoid_feasible_returns_input():
    x = np.array([0.3, -0.2, 0.1])
    y, lam = project_ellipsoid(x, np.array([1.0, 2.0, 0.5]), 1.0)
    np.testing.assert_array_equal(y, x)
    assert lam == 0.0


def test_project_ellipsoid_matches_projected_gradient_value():
    y, lam = project_ellipsoid(np.array([2.0, 2.0]), np.array([1.0, 2.0]), 1.0)
    assert lam > 0
    np.testing.assert_allclose(y, ELLIPSOID_PG, rtol=0, atol=1e-6)
    assert abs(np.linalg.norm(y / np.array([1.0, 2.0])) - 1.0) <= 1e-12


def test_project_ellipsoid_errors():
    with pytest.raises(ValueError):
        project_ellipsoid(np.array([1.0, np.nan]), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        project_ellipsoid(np.array([1.0, 2.0]), np.array([1.0, np.inf]), 1.0)
    with pytest.raises(ValueError):
        project_ellipsoid(np.array([1.0, 2.0]), np.array([1.0, 0.0]), 1.0)
    with pytest.raises(ValueError):
        project_ellipsoid(np.array([1.0, 2.0]), np.ones(2), -1.0)


@given(cases())
def test_project_ellipsoid_unit_weights_is_ball(case):
    x, _, gamma = case
    y, _ = project_ellipsoid(x, np.ones_like(x), gamma)
    assert np.max(np.abs(y - project_ball(x, gamma))) <= 1e-10


def test_ball_prox_examples():
    np.testing.assert_allclose(prox_nonneg_group_ball(np.array([-1.0, 3.0, 4.0]), 2.5), [0.0, 1.5, 2.0], rtol=1e-15)
    np.testing.assert_array_equal(prox_nonneg_group_ball(np.array([3.0, 4.0]), 5.0), [0.0, 0.0])


def test_ball_prox_matches_grid_polish_value():
    assert np.array_equal(np.random.default_rng(20).normal(size=5), BALL_X5)
    np.testing.assert_allclose(prox_nonneg_group_ball(np.array(BALL_X5), 0.7), BALL_GRID_POLISH, rtol=0, atol=1e-6)


def test_weighted_prox_examples():
    x = np.array([-1.0, -0.0, -3.0])
    np.testing.assert_array_equal(prox_nonneg_group_weighted(x, np.array([1.0, 2.0, 3.0]), 0.4), 0.0)
    y = prox_nonneg_group_weighted(np.ones(3), np.array([1.0, 2.0, 4.0]), 0.3)
    np.testing.assert_allclose(y, WEIGHTED_SUBGRADIENT, rtol=0, atol=1e-6)


def test_weighted_prox_matches_direct_minimizer():
    y = prox_nonneg_group_weighted(np.ones(3), np.array([1.0, 2.0, 4.0]), 0.3)
    np.testing.assert_allclose(y, oracles.direct_prox(np.ones(3), np.array([1.0, 2.0, 4.0]), 0.3), rtol=0, atol=1e-6)


@given(cases())
def test_weighted_unit_weights_is_ball_prox(case):
    x, _, gamma = case
    d = prox_nonneg_group_weighted(x, np.ones_like(x), gamma) - prox_nonneg_group_ball(x, gamma)
    assert np.max(np.abs(d)) <= 1e-10


def test_conjugate_examples():
    x = np.array([-1.0, -2.0, 0.0])
    np.testing.assert_array_equal(prox_conjugate(x, np.ones(3), 1.0), x)
    np.testing.assert_allclose(prox_conjugate(np.array([3.0, 4.0]), np.ones(2), 2.5), [1.5, 2.0], rtol=1e-15)


@given(cases())
def test_moreau_identity(case):
    x, xi, gamma = case
    r = prox_nonneg_group_weighted(x, xi, gamma) + prox_conjugate(x, xi, gamma) - x
    assert np.max(np.abs(r)) <= 1e-8


@given(cases(max_dim=8), st.integers(0, 2**32 - 1))
def test_nonexpansive(case, seed):
    x, xi, gamma = case
    z = x + np.random.default_rng(seed).normal(size=x.size)
    for f in (lambda v: prox_nonneg_group_weighted(v, xi, gamma), lambda v: prox_nonneg_group_ball(v, gamma)):
        assert np.linalg.norm(f(x) - f(z)) <= np.linalg.norm(x - z) * (1 + 1e-9) + 1e-12


@settings(max_examples=25)
@given(cases(max_dim=6), st.integers(0, 2**32 - 1))
def test_prox_optimality_certificate(case, seed):
    x, xi, gamma = case
    y = prox_nonneg_group_weighted(x, xi, gamma)
    fy = oracles.prox_objective(y, x, xi, gamma)
    rng = np.random.default_rng(seed)
    Z = np.abs(y + rng.normal(size=(10_000, x.size)) * rng.choice([1e-3, 0.1, 1.0], size=(10_000, 1)))
    fz = 0.5 * np.sum((Z - x) ** 2, axis=1) + gamma * np.linalg.norm(Z * xi, axis=1)
    assert fy <= fz.min() + 1e-12 * max(1.0, abs(fy))


@given(cases())
def test_ellipsoid_kkt(case):
    x, xi, gamma = case
    y, lam = project_ellipsoid(positive_part(x), xi, gamma)
    assert lam >= 0
    assert abs(lam * (np.sum((y / xi) ** 2) - gamma**2)) <= 1e-8 * gamma**2
    assert np.linalg.norm(y / xi) <= gamma * (1 + 1e-12)


@given(cases())
def test_prox_ignores_negative_part(case):
    x, xi, gamma = case
    assert np.array_equal(prox_nonneg_group_weighted(x, xi, gamma), prox_nonneg_group_weighted(positive_part(x), xi, gamma))
    assert np.array_equal(prox_nonneg_group_ball(x, gamma), prox_nonneg_group_ball(positive_part(x), gamma))


@given(cases())
def test_projection_support_shrinks(case):
    x, xi, gamma = case
    x = np.where(np.arange(x.size) % 3 == 0, 0.0, x)
    y, _ = project_ellipsoid(x, xi, gamma)
    assert np.all(y[x == 0] == 0)


@given(cases())
def test_prox_is_nonnegative_and_below_positive_part(case):
    x, xi, gamma = case
    y = prox_nonneg_group_weighted(x, xi, gamma)
    assert np.all(y >= 0)
    assert np.all(y <= positive_part(x) + 1e-15)


def test_positive_part_absorbs_negative_zero():
    out = positive_part(np.array([-0.0, -1e-13, 2.0]))
    assert out.tobytes() == np.array([0.0, 0.0, 2.0]).tobytes()


def _per_pixel_reference(a, thr, aleph, xi=None):
    out = np.maximum(a, 0.0)
    for m in range(a.shape[1]):
        for n in range(a.shape[2]):
            fib = a[aleph, m, n]
            if xi is None:
                out[aleph, m, n] = prox_nonneg_group_ball(fib, thr)
            else:
                out[aleph, m, n] = prox_nonneg_group_weighted(fib, xi, thr)
    return out


def test_stack_prox_matches_per_pixel_loop(rng):
    # 2 x 2 pixels, 3 bins, group over the last two bins (0-based {1, 2})
    a = rng.normal(size=(3, 2, 2))
    np.testing.assert_array_equal(apply_prox_stack(a, 0.4, aleph=[1, 2]), _per_pixel_reference(a, 0.4, [1, 2]))
    xi = np.array([0.5, 3.0])
    got = apply_prox_stack(a, 0.4, aleph=[1, 2], xi=xi, mode="ellipsoid")
    np.testing.assert_allclose(got, _per_pixel_reference(a, 0.4, [1, 2], xi), rtol=0, atol=1e-14)


def test_stack_prox_vectorized_ellipsoid_matches_scalar(rng):
    a = rng.normal(size=(5, 9, 7)) * 2
    xi = rng.uniform(0.3, 3.0, size=4)
    got = apply_prox_stack(a, 0.8, aleph=[0, 1, 3, 4], xi=xi, mode="ellipsoid")
    np.testing.assert_allclose(got, _per_pixel_reference(a, 0.8, [0, 1, 3, 4], xi), rtol=0, atol=1e-12)


def test_stack_prox_trivial_cases(rng):
    a = rng.random((3, 4, 4))
    np.testing.assert_array_equal(apply_prox_stack(a, 0.0), a)
    np.testing.assert_array_equal(apply_prox_stack(-a, 0.7), np.zeros_like(a))


def test_stack_prox_accepts_psdr_and_masks(rng):
    stack = PsdrStack(rng.normal(size=(3, 5, 5)), SigmaGrid([1.0, 2.0, 3.0, 4.0], aleph=[0, 2]))
    mu = np.ones((5, 5))
    mu[0] = 0
    out = apply_prox_stack(stack, 0.3, mu=mu)
    ref = _per_pixel_reference(stack.coeffs, 0.3, [0, 2]) * mu
    np.testing.assert_array_equal(out, ref)


def test_stack_prox_errors(rng):
    with pytest.raises(ValueError):
        apply_prox_stack(rng.random((3, 4)), 0.1)
    with pytest.raises(ValueError):
        apply_prox_stack(rng.random((3, 4, 4)), -0.1)
    with pytest.raises(ValueError):
        apply_prox_stack(rng.random((3, 4, 4)), 0.1, mu=np.ones((3, 3)))
    with pytest.raises(ValueError):
        apply_prox_stack(rng.random((3, 4, 4)), 0.1, xi=np.ones(2), mode="ellipsoid")
    with pytest.raises(ValueError):
        apply_prox_stack(rng.random((3, 4, 4)), 0.1, mode="diamond")


def test_regularizer_examples(rng):
    assert regularizer_value(np.zeros((2, 3, 3))) == 0.0
    a = np.zeros((2, 3, 3))
    a[:, 1, 2] = [3.0, 4.0]
    assert regularizer_value(a) == 5.0
    a[0, 0, 0] = -1e-13
    assert regularizer_value(a) == 5.0
    a[0, 0, 0] = -1e-9
    assert regularizer_value(a) == math.inf


def test_regularizer_matches_naive_loop(rng):
    a = rng.random((4, 6, 5))
    xi = np.array([1.0, 0.5, 2.0])
    aleph = [0, 2, 3]
    ref = 0.0
    for m in range(6):
        for n in range(5):
            ref += math.sqrt(sum((xi[i] * a[k, m, n]) ** 2 for i, k in enumerate(aleph)))
    assert abs(regularizer_value(a, aleph, xi) - ref) <= 1e-10


def test_oracle_suite_small_run():
    rep = oracles.run_prox_suite(seed=3, cases=200, oracle_cases=20)
    assert rep.passed, rep.lines()
    assert len(rep.lines()) == 6
