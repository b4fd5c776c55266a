import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distflow.hermite import HermiteCoeffs, TruncationScheme, basis_vector, hermite_functions, hermite_transform
from distflow.sobolev import (
    SobolevElement,
    TruncationWarning,
    classify_dirac_growth,
    derivative_boundedness_probe,
    dirac_cauchy_degree,
    dirac_coeffs,
    dirac_partial_sums,
    dirac_shell_terms,
    dirac_tail_bound,
    duality_pair,
    norm_weights,
    sobolev_inner,
    sobolev_norm,
)


def vectors(d=1, N=8):
    s = TruncationScheme(d, N)
    return st.lists(st.floats(-10, 10, allow_nan=False), min_size=s.size, max_size=s.size).map(
        lambda v: HermiteCoeffs(s, np.array(v))
    )


def test_norm_of_e2():
    s = TruncationScheme(1, 4)
    assert sobolev_norm(basis_vector(s, [2]), 0.5) == pytest.approx(math.sqrt(5), rel=1e-15)


@given(st.integers(1, 3), st.integers(0, 6), st.floats(-3, 3))
def test_basis_norm_formula(d, n, p):
    s = TruncationScheme(d, 6)
    k = s.indices[np.flatnonzero(s.degrees == n)[0]]
    assert sobolev_norm(basis_vector(s, k), p) == pytest.approx((2 * n + d) ** p, rel=1e-12)


@given(vectors(2, 5), st.floats(0, 3), st.floats(0, 1))
def test_norms_increase_with_index(c, p, frac):
    q = p * frac
    assert sobolev_norm(c, q) <= sobolev_norm(c, p) * (1 + 1e-12) + 1e-300


@given(vectors(1, 10), vectors(1, 10), st.floats(-2, 2))
def test_duality_cauchy_schwarz(a, b, p):
    val = duality_pair(a, b, p)
    assert abs(val) <= sobolev_norm(a, -p) * sobolev_norm(b, p) * (1 + 1e-12) + 1e-12


@given(vectors(1, 10), st.floats(-2, 2))
def test_parseval(c, p):
    assert sobolev_inner(c, c, p) == pytest.approx(sobolev_norm(c, p) ** 2, rel=1e-12, abs=1e-300)
    assert sobolev_inner(c, c, 0) == pytest.approx(float(c.values @ c.values), rel=1e-12, abs=1e-300)


def test_pairing_of_gaussian_with_itself():
    s = TruncationScheme(1, 30)
    g = hermite_transform(lambda x: np.exp(-x[..., 0] ** 2 / 2), s)
    assert duality_pair(g, g) == pytest.approx(math.sqrt(math.pi), rel=1e-12)


def test_dirac_pairs_to_point_value():
    s = TruncationScheme(1, 12)
    phi = hermite_transform(lambda x: hermite_functions(4, x[..., 0])[4], s)
    val = duality_pair(dirac_coeffs(1.5, s), phi)
    assert val == pytest.approx(hermite_functions(4, 1.5)[4], abs=1e-12)


def test_dirac_rejects_bad_points():
    s = TruncationScheme(2, 3)
    with pytest.raises(ValueError):
        dirac_coeffs([0.0], s)
    with pytest.raises(ValueError):
        dirac_coeffs([np.nan, 0.0], s)


def test_sobolev_element_pairing_uses_index():
    s = TruncationScheme(1, 6)
    e = SobolevElement(basis_vector(s, [3]), 1.0)
    assert e.norm() == pytest.approx(7.0)
    assert e.norm(0) == pytest.approx(1.0)
    assert duality_pair(SobolevElement(basis_vector(s, [3]), -1.0), e) == 1.0


def test_truncation_warning_when_tail_dominates():
    s = TruncationScheme(1, 4)
    a = HermiteCoeffs(s, np.array([1e-6, 0, 0, 0, 0]), aliasing=1.0)
    b = HermiteCoeffs(s, np.array([1e-6, 0, 0, 0, 0]))
    with pytest.warns(TruncationWarning):
        duality_pair(a, b)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        duality_pair(b, b)


def test_shell_terms_match_brute_force_2d():
    q, n_max = 0.6, 10
    s = TruncationScheme(2, n_max)
    c = dirac_coeffs([0.0, 0.0], s)
    brute = np.zeros(n_max + 1)
    np.add.at(brute, s.degrees, norm_weights(s, -q) * c.values**2)
    np.testing.assert_allclose(dirac_shell_terms(q, 2, n_max), brute, rtol=1e-12, atol=1e-300)


def test_partial_sums_match_direct_norm():
    s = TruncationScheme(1, 40)
    direct = sobolev_norm(dirac_coeffs(0.0, s), -0.4) ** 2
    assert dirac_partial_sums(0.4, 1, 40)[-1] == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("q,d,verdict", [(0.3, 1, "cauchy"), (0.2, 1, "divergent"), (0.55, 2, "cauchy"), (0.45, 2, "divergent")])
def test_dirac_threshold_classification(q, d, verdict):
    assert classify_dirac_growth(q, d)["verdict"] == verdict


def test_dirac_slope_near_threshold_inconclusive():
    assert classify_dirac_growth(0.26, 1)["verdict"] == "inconclusive"


@given(st.floats(0.26, 2.0), st.integers(2, 4000))
def test_tail_bound_dominates_remaining_terms(q, N):
    terms = dirac_shell_terms(q, 1, 2 * N + 20000)
    tail = terms[N + 1 :].sum()
    assert tail <= dirac_tail_bound(q, N) * (1 + 1e-12)


def test_tail_bound_infinite_at_threshold():
    assert dirac_tail_bound(0.25, 100) == math.inf
    assert dirac_cauchy_degree(0.2) == math.inf


def test_cauchy_degree_for_q_03():
    N = dirac_cauchy_degree(0.3)
    assert N == pytest.approx(5.214e31, rel=1e-3)
    assert dirac_tail_bound(0.3, int(N)) < 1e-3


def test_probe_basis_max_p1():
    out = derivative_boundedness_probe(1.0, 200, TruncationScheme(1, 30))
    assert out["basis_max_ratio"] == pytest.approx(math.sqrt(1.5), rel=1e-12)
    assert out["basis_argmax_degree"] == 0


def test_probe_p0_values():
    out = derivative_boundedness_probe(0.0, 500, TruncationScheme(1, 40))
    assert out["basis_max_ratio"] == pytest.approx(0.8367, abs=5e-4)
    assert out["basis_argmax_degree"] == 1
    assert out["operator_norm"] == pytest.approx(0.9988, abs=5e-4)
    assert out["max_ratio"] <= out["operator_norm"] * (1 + 1e-12)


@given(st.floats(-1, 2), st.integers(1, 50))
def test_probe_random_never_exceeds_operator_norm(p, samples):
    out = derivative_boundedness_probe(p, samples, TruncationScheme(2, 6), axis=1)
    assert out["max_ratio"] <= out["operator_norm"] * (1 + 1e-12)
    assert out["basis_max_ratio"] <= out["operator_norm"] * (1 + 1e-12)
