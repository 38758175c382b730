from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kahlerflow import algebra

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def test_sigma_k_einstein_is_binomial():
    assert np.allclose(algebra.sigma_k([1.0, 1.0]), [1, 2, 1])
    assert np.allclose(algebra.sigma_k(algebra.RicciSpectrum((1.0, 1.0, 1.0))), [comb(3, k) for k in range(4)])


def test_sigma_k_two_values():
    a, b = 0.7, -2.5
    assert np.allclose(algebra.sigma_k([a, b]), [1, a + b, a * b])


def test_sigma_k_fieldwise():
    r1 = np.linspace(-1, 1, 7)
    r2 = np.linspace(2, 3, 7)
    s = algebra.sigma_fields([r1, r2])
    assert np.allclose(s[1], r1 + r2) and np.allclose(s[2], r1 * r2)


def test_ricci_spectrum_rejects_nan():
    with pytest.raises(ValueError):
        algebra.RicciSpectrum((1.0, float("nan")))


@settings(max_examples=1000, deadline=None)
@given(st.lists(finite, min_size=1, max_size=6), finite)
def test_sigma_k_product_expansion(r, t):
    sig = algebra.sigma_k(r)
    lhs = sum(sig[k] * t**k for k in range(len(r) + 1))
    rhs = np.prod([1 + t * x for x in r])
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, np.prod([1 + abs(t * x) for x in r]))


def test_poly_identity_examples():
    assert algebra.poly_identity_lhs(3.0, 3.0, 2) == pytest.approx(27.0)
    assert algebra.poly_identity_lhs(2.0, 1.0, 2) == pytest.approx(12.0)
    with pytest.raises(ValueError):
        algebra.poly_identity_lhs(1.0, 1.0, 0)


@settings(max_examples=1000, deadline=None)
@given(finite, finite, st.integers(1, 10))
def test_poly_identity_property(x, y, k):
    scale = (k + 1) ** 2 * max(1.0, abs(x), abs(y)) ** k
    assert abs(algebra.poly_identity_lhs(x, y, k) - (k + 1) * x**k) <= 1e-10 * scale


def test_vandermonde_n1_closed_form():
    c, _ = algebra.vandermonde_inverse(1, exact=True)
    assert c == [[Fraction(2), Fraction(-1)], [Fraction(-1, 2), Fraction(1, 2)]]
    assert np.array_equal(algebra.vandermonde_matrix(1), [[1.0, 2.0], [1.0, 4.0]])


@pytest.mark.parametrize("n", range(1, 7))
def test_vandermonde_delta_property(n):
    c, _ = algebra.vandermonde_inverse(n)
    for i in range(1, n + 2):
        for k in range(1, n + 2):
            assert abs(algebra.lagrange_eval(c, i, k) - (i == k)) < 1e-10
    assert np.abs(c @ algebra.vandermonde_matrix(n) - np.eye(n + 1)).max() < 1e-9


def test_vandermonde_exact_identity():
    rows, _ = algebra.vandermonde_inverse(4, exact=True)
    for i in range(5):
        for k in range(1, 6):
            assert sum(rows[i][j] * k ** (j + 1) for j in range(5)) == (i + 1 == k)


def test_vandermonde_conditioning_error():
    with pytest.raises(algebra.ConditioningError):
        algebra.vandermonde_inverse(40)


def test_constant_model_components():
    T = algebra.constant_curvature_model(2, 2.0)
    e1, e2 = np.eye(2, dtype=complex)
    assert T.holomorphic_sectional(e1) == pytest.approx(2.0, abs=1e-14)
    assert T.bisectional(e1, e2) == pytest.approx(1.0, abs=1e-14)
    T1 = algebra.constant_curvature_model(1, 2.0)
    e = np.ones(1, dtype=complex)
    assert T1.holomorphic_sectional(e) == pytest.approx(T1.bisectional(e, e))


def test_model_minus_projection_is_zero():
    T = algebra.constant_curvature_model(3, 2.0)
    D = T - algebra.constant_curvature_projection(T)
    assert np.abs(D.components).max() < 1e-14


def test_model_sectional_values(rng):
    for n in (2, 3):
        T = algebra.constant_curvature_model(n)
        for _ in range(10):
            w1, w2 = algebra.random_orthogonal_lines(n, rng)
            assert abs(algebra.sectional_from_bisectional(T, w1, w2) - 0.5) < 1e-12
            w1, w2 = algebra.random_same_line(n, rng)
            assert abs(algebra.sectional_from_bisectional(T, w1, w2) - 2.0) < 1e-12


def test_conversion_matches_real_brute_force(rng):
    for _ in range(100):
        n = int(rng.integers(2, 5))
        T = algebra.random_kahler_tensor(n, rng)
        for w1, w2 in (algebra.random_orthogonal_lines(n, rng), algebra.random_same_line(n, rng)):
            assert abs(algebra.sectional_from_bisectional(T, w1, w2) - T.sectional_real(w1, w2)) < 1e-10


def test_conversion_rejects_bad_planes(rng):
    T = algebra.random_kahler_tensor(2, rng)
    w1 = np.array([1.0, 0, 0, 0])
    with pytest.raises(algebra.GeometricInputError):
        algebra.sectional_from_bisectional(T, w1, w1)
    # complex lines neither equal nor orthogonal
    w2 = np.array([0, 0, 1.0, 1.0]) / np.sqrt(2)
    w3 = np.array([0.0, 1.0, 0, 0])
    v = (w2 + w3) / np.linalg.norm(w2 + w3)
    with pytest.raises(algebra.GeometricInputError):
        algebra.sectional_from_bisectional(T, w1, v)


@settings(max_examples=1000, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_polarization_property(n, seed):
    rng = np.random.default_rng(seed)
    T = algebra.random_kahler_tensor(n, rng)
    x = rng.normal(size=2 * n)
    y = rng.normal(size=2 * n)
    jx = algebra.J(x)
    y = y - (y @ jx) / (jx @ jx) * jx
    lhs = algebra.polarization_lhs(T, x, y)
    assert abs(lhs - algebra.polarization_rhs(T, x, y)) <= 1e-10 * (1 + abs(lhs))
