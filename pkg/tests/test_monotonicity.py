import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distflow.hermite import HermiteCoeffs, TruncationScheme, basis_vector
from distflow.monotonicity import (
    ConstantOperatorPair,
    MonotonicityReport,
    estimate_constant,
    monotonicity_lhs,
    quadratic_form,
    sup_ratio,
)
from distflow.sobolev import SobolevElement, sobolev_norm

coef = st.floats(-2, 2, allow_nan=False)


@st.composite
def operators(draw, d=1, p=None):
    s = np.array(draw(st.lists(coef, min_size=d * d, max_size=d * d))).reshape(d, d)
    b = np.array(draw(st.lists(coef, min_size=d, max_size=d)))
    pp = draw(st.floats(-1, 2)) if p is None else p
    return ConstantOperatorPair(s, b, pp)


def phis(d=1, N=6):
    s = TruncationScheme(d, N)
    return st.lists(st.floats(-3, 3, allow_nan=False), min_size=s.size, max_size=s.size).map(
        lambda v: HermiteCoeffs(s, np.array(v))
    )


def test_zero_phi_gives_zero():
    ops = ConstantOperatorPair([[1.0]], [0.5], 0.0)
    assert monotonicity_lhs(ops, HermiteCoeffs.zeros(TruncationScheme(1, 5))) == 0.0


def test_hand_computed_value():
    # sigma = 1, b = 0, p = 0, phi = e_0: d^2 e_0 = -e_0/2 + e_2/sqrt(2), d e_0 = -e_1/sqrt(2)
    ops = ConstantOperatorPair([[1.0]], [0.0], 0.0)
    val = monotonicity_lhs(ops, basis_vector(TruncationScheme(1, 4), [0]))
    assert val == pytest.approx(-0.5 + 1 / 18, rel=1e-14)


@given(operators(1, p=1.0), phis(1, 8))
def test_p_one_cancels_exactly(ops, phi):
    scale = max(1.0, np.abs(phi.values).max() ** 2) * 100
    assert abs(monotonicity_lhs(ops, phi)) <= 1e-12 * scale


@given(operators(2, p=1.0), phis(2, 4))
def test_p_one_cancels_in_2d(ops, phi):
    scale = max(1.0, np.abs(phi.values).max() ** 2) * 100
    assert abs(monotonicity_lhs(ops, phi)) <= 1e-12 * scale


@given(operators(1), phis(1, 8))
def test_quadratic_form_matches_term_by_term(ops, phi):
    M = quadratic_form(ops, phi.scheme)
    lhs = monotonicity_lhs(ops, phi)
    assert phi.values @ M @ phi.values == pytest.approx(lhs, rel=1e-9, abs=1e-9)


@given(operators(1), phis(1, 6), st.floats(-3, 3))
def test_quadratic_scaling(ops, phi, lam):
    a = monotonicity_lhs(ops, phi * lam)
    b = lam**2 * monotonicity_lhs(ops, phi)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


@given(operators(1), phis(1, 6))
def test_sign_of_sigma_irrelevant(ops, phi):
    flipped = ConstantOperatorPair(-ops.sigma, ops.b, ops.p)
    assert monotonicity_lhs(flipped, phi) == pytest.approx(monotonicity_lhs(ops, phi), rel=1e-12, abs=1e-12)


@given(operators(1), phis(1, 10))
def test_no_phi_beats_the_supremum(ops, phi):
    C, _ = sup_ratio(ops, phi.scheme)
    n2 = sobolev_norm(phi, ops.p - 1) ** 2
    assert monotonicity_lhs(ops, phi) <= C * n2 + 1e-9 * max(1.0, n2)


def test_supremum_is_attained():
    ops = ConstantOperatorPair([[0.8]], [-0.6], 0.0)
    s = TruncationScheme(1, 12)
    C, v = sup_ratio(ops, s)
    phi = HermiteCoeffs(s, v)
    assert monotonicity_lhs(ops, SobolevElement(phi, 0.0)) == pytest.approx(C * sobolev_norm(phi, -1) ** 2, rel=1e-10)


def test_alpha_bound_enforced():
    with pytest.raises(ValueError):
        ConstantOperatorPair([[2.0]], [0.0], 0.0, alpha=1.0)


def test_alpha_zero_gives_zero():
    rep = estimate_constant(0.0, 0.0, 1, 100, TruncationScheme(1, 8))
    assert rep.C_hat == 0.0


def test_regression_anchor_p0():
    rep = estimate_constant(1.0, 0.0, 1, 100, TruncationScheme(1, 32), seed=0)
    assert rep.C_hat == pytest.approx(4.999786942719473, rel=1e-10)
    assert rep.argmax_phi_degree == 1
    assert rep.random_phi_max <= rep.C_hat


def test_p_one_constant_vanishes():
    rep = estimate_constant(1.0, 1.0, 1, 100, TruncationScheme(1, 16))
    assert rep.C_hat <= 1e-8


def test_saturation_curve_nondecreasing():
    rep = estimate_constant(1.0, 0.5, 1, 100, TruncationScheme(1, 16))
    Ns = [n for n, _ in rep.saturation_curve]
    Cs = [c for _, c in rep.saturation_curve]
    assert Ns == [4, 8, 16, 32]
    assert all(b >= a - 1e-10 for a, b in zip(Cs, Cs[1:]))
    # the curve flattens: the last doubling changes C_hat by under 10%
    assert Cs[-1] <= 1.1 * Cs[-2]


def test_report_json_round_trip():
    rep = estimate_constant(1.0, 0.0, 1, 100, TruncationScheme(1, 6), saturation_N=(6,))
    import json

    back = MonotonicityReport(**json.loads(rep.to_json()))
    assert back.C_hat == rep.C_hat and back.samples == rep.samples


def test_sample_count_floor():
    with pytest.raises(ValueError):
        estimate_constant(1.0, 0.0, 1, 99, TruncationScheme(1, 6))


def test_seed_determinism():
    s = TruncationScheme(2, 5)
    a = estimate_constant(1.0, 0.0, 2, 100, s, seed=3, saturation_N=(5,))
    b = estimate_constant(1.0, 0.0, 2, 100, s, seed=3, saturation_N=(5,))
    assert a.to_json() == b.to_json()
