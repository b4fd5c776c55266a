import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad

from distflow.distribution import CoefficientMatrix, ConstantFunction, DiracDelta, Fields, GaussianDensity, gaussian_coeffs, to_coeffs
from distflow.evolution import (
    AliveIndicator,
    EmpiricalKernel,
    HypothesisViolation,
    PairingObservable,
    adjoint_apply,
    estimate_kernel,
    estimate_psi,
    evolution_residual,
    forward_panel,
    forward_residual,
    generator_of_translates,
    generator_special_case,
    nonlinear_convolution,
    semigroup_estimate,
)
from distflow.hermite import HermiteCoeffs, TruncationScheme, basis_vector, derivative_coeffs, hermite_functions, hermite_transform
from distflow.sobolev import TruncationWarning

Y = GaussianDensity([0.0], 1.0)
S12 = TruncationScheme(1, 12)


def const(s, b):
    return CoefficientMatrix.constant([[s]], [b])


# ---- kernel

def test_kernel_without_noise_is_a_point_mass():
    ks = estimate_kernel([0.5], Y, const(0.0, 0.4), [0.0, 0.5], 20, dt=0.01)
    assert np.all(ks[0].samples == 0.5)
    np.testing.assert_allclose(ks[1].samples, 0.7, atol=1e-12)
    assert ks[1].alive_fraction == 1


def test_kernel_moments():
    s, b, t, M = 0.8, 0.3, 0.5, 10000
    k = estimate_kernel([0.0], Y, const(s, b), [t], M, seed=1, dt=0.01)[0]
    m, se = k.expect(lambda x: x[:, 0])
    assert abs(m - b * t) <= 4 * se
    v = k.samples[:, 0].var(ddof=1)
    assert abs(v - s**2 * t) <= 4 * s**2 * t * math.sqrt(2 / M)


def test_kernel_weights_are_exact():
    k = EmpiricalKernel(0.1, np.zeros((7, 1)))
    assert k.weight == Fraction(1, 7)
    assert k.total_weight() == 1


def test_explosive_kernel_has_full_cemetery_mass():
    f = Fields.from_functions(lambda x: 0 * x, lambda x: x**2)
    k = estimate_kernel([1.0], Y, const(0, 0), [2.0], 5, dt=1e-3, fields=f)[0]
    assert k.cemetery_mass == 1
    assert k.expect(lambda x: x[:, 0]) == (0.0, 0.0)


def test_kernel_csv():
    k = EmpiricalKernel(0.5, np.array([[1.0], [np.inf]]))
    assert k.to_csv().split("\n")[:3] == ["t,x_1,alive", "0.5,1.0,1", "0.5,inf,0"]


# ---- nonlinear convolution

def test_convolution_with_point_mass_at_origin():
    k = EmpiricalKernel(0.0, np.zeros((4, 1)))
    out = nonlinear_convolution(k, Y, S12)
    np.testing.assert_allclose(out.values, to_coeffs(Y, S12).values, rtol=1e-14)


def test_convolution_of_two_atoms():
    k = EmpiricalKernel(0.0, np.array([[1.0], [-0.5]]))
    out = nonlinear_convolution(k, Y, S12)
    ref = 0.5 * (gaussian_coeffs(GaussianDensity([1.0], 1.0), S12) + gaussian_coeffs(GaussianDensity([-0.5], 1.0), S12))
    np.testing.assert_allclose(out.values, ref, atol=1e-14)


def test_convolution_of_gaussian_cloud():
    M, m, v = 20000, 0.4, 0.5
    x = m + math.sqrt(v) * np.random.default_rng(0).standard_normal((M, 1))
    out, se = nonlinear_convolution(EmpiricalKernel(0.0, x), Y, S12, with_error=True)
    ref = gaussian_coeffs(GaussianDensity([m], 1.0 + v), S12)
    assert np.all(np.abs(out.values - ref) <= 4 * se + 1e-12)


def test_convolution_cemetery_rows_are_zero():
    k = EmpiricalKernel(0.0, np.array([[0.0], [np.inf]]))
    out = nonlinear_convolution(k, Y, S12)
    np.testing.assert_allclose(out.values, 0.5 * to_coeffs(Y, S12).values)


def test_generator_rows_at_origin_match_L():
    from distflow.distribution import apply_L, coefficient_fields

    coeffs = const(0.7, 0.2)
    h = generator_of_translates(coefficient_fields(coeffs, Y), Y, S12)
    row = h(np.zeros((1, 1)))[0]
    np.testing.assert_allclose(row, apply_L(coeffs, to_coeffs(Y, S12)).coeffs.values, atol=1e-12)


# ---- psi

def test_psi_starts_at_y_exactly():
    rep = estimate_psi(Y, const(0.5, 0.1), [0.0, 0.1], 50, dt=0.01, N=8)
    assert np.array_equal(rep.psi[0], to_coeffs(Y, TruncationScheme(1, 8)).values)
    assert np.all(rep.stderr[0] == 0)


def test_psi_frozen_without_coefficients():
    rep = estimate_psi(Y, const(0.0, 0.0), [0.0, 0.5, 1.0], 10, dt=0.01, N=8)
    np.testing.assert_allclose(rep.psi, np.broadcast_to(rep.psi[0], rep.psi.shape), rtol=1e-14, atol=1e-16)


def test_psi_linear_in_y_with_frozen_fields():
    f = Fields.constant([[0.6]], [0.2])
    a = estimate_psi(Y, None, [0.0, 0.2], 100, seed=4, dt=0.01, fields=f, with_generator=False)
    b = estimate_psi(GaussianDensity([0.0], 1.0, 2.5), None, [0.0, 0.2], 100, seed=4, dt=0.01, fields=f, with_generator=False)
    np.testing.assert_allclose(b.psi, 2.5 * a.psi, rtol=1e-12, atol=1e-15)


def test_psi_matches_gaussian_closed_form():
    s, b, t = 0.7, 0.3, 0.5
    rep = estimate_psi(Y, const(s, b), [t], 20000, seed=2, dt=0.01, N=8, with_generator=False)
    ref = gaussian_coeffs(GaussianDensity([b * t], 1.0 + s**2 * t), TruncationScheme(1, 8))
    assert np.all(np.abs(rep.psi[0] - ref) <= 4 * rep.stderr[0] + 1e-12)
    assert rep.mass[0] == pytest.approx(1.0, abs=1e-4)


def test_psi_standard_error_scales_like_inverse_root_M():
    ses = [estimate_psi(Y, const(0.7, 0.0), [0.3], M, seed=0, dt=0.01, N=4, with_generator=False).stderr[0, 0] for M in (400, 1600, 6400)]
    slope = np.polyfit(np.log([400, 1600, 6400]), np.log(ses), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


def test_psi_rejects_explosion_and_bound():
    f = Fields.from_functions(lambda x: 0 * x, lambda x: x**2 + 1)
    with pytest.raises(HypothesisViolation):
        estimate_psi(Y, None, [0.0, 2.0], 4, dt=0.01, fields=f)
    with pytest.raises(HypothesisViolation):
        estimate_psi(Y, const(2.0, 0.0), [0.0, 0.1], 4, dt=0.01, bound=1.0)


def test_evolution_residual_passes_for_constant_fields():
    rep = estimate_psi(Y, const(0.6, 0.2), np.linspace(0, 0.5, 11), 2000, seed=0, dt=0.01, N=8)
    out = evolution_residual(rep)
    assert out["pass"]
    assert len(out["differential"]) == 7 and len(out["integrated"]) == 10


def test_evolution_residual_detects_wrong_generator():
    rep = estimate_psi(Y, const(0.6, 0.2), np.linspace(0, 0.5, 11), 2000, seed=0, dt=0.01, N=8)
    rep.L_rows = 2.0 * rep.L_rows
    assert not evolution_residual(rep)["pass"]


# ---- adjoint

def test_adjoint_of_zero():
    out = adjoint_apply(Fields.from_functions(lambda x: 1 + 0 * x, lambda x: x), HermiteCoeffs.zeros(S12))
    assert not out.values.any()


def test_adjoint_constant_diffusion_is_half_second_derivative():
    phi = basis_vector(S12, [3])
    out = adjoint_apply(Fields.constant([[1.0]], [0.0]), phi)
    np.testing.assert_allclose(out.values, 0.5 * derivative_coeffs(derivative_coeffs(phi)).values, atol=1e-14)


def test_adjoint_duality_with_variable_fields():
    f_fields = Fields.from_functions(lambda x: 1 + 0.3 * np.exp(-(x**2)), lambda x: 0.5 * np.exp(-((x - 0.5) ** 2)))
    s = TruncationScheme(1, 80)
    phi = hermite_transform(lambda p: np.exp(-((p[..., 0] - 0.2) ** 2)), s)
    adj = adjoint_apply(f_fields, phi, tol=1e-7)
    rng = np.random.default_rng(0)
    for _ in range(5):
        c, w = rng.uniform(-1, 1), rng.uniform(0.5, 2)
        f = lambda x: np.exp(-((x - c) ** 2) / w)
        f1 = lambda x: -2 * (x - c) / w * f(x)
        f2 = lambda x: ((2 * (x - c) / w) ** 2 - 2 / w) * f(x)
        Lf = lambda x: 0.5 * (1 + 0.3 * np.exp(-(x**2))) ** 2 * f2(x) + 0.5 * np.exp(-((x - 0.5) ** 2)) * f1(x)
        lhs = adj.values @ hermite_transform(lambda p: f(p[..., 0]), adj.scheme).values
        rhs = quad(lambda x: float(phi.evaluate(x)) * Lf(x), -20, 20, limit=200)[0]
        assert lhs == pytest.approx(rhs, abs=1e-7)


def test_adjoint_warns_on_poor_projection():
    rough = Fields.from_functions(lambda x: 1 + np.abs(x), lambda x: 0 * x)
    with pytest.warns(TruncationWarning):
        adjoint_apply(rough, basis_vector(TruncationScheme(1, 4), [0]), Q=20)


# ---- forward equation

def test_forward_rejects_small_q():
    with pytest.raises(ValueError, match="q must exceed d/4"):
        forward_residual([0.0], Y, const(1, 0), [0.0, 0.1], 10, q=0.25, dt=0.01)


def test_forward_at_time_zero_is_exactly_zero():
    out = forward_residual([0.0], Y, const(1, 0), [0.0], 10, q=0.5, dt=0.01)
    assert out["norm"] == [0.0] and out["pass"]


def test_forward_panel_derivatives():
    x = np.linspace(-2, 2, 9)[:, None]
    h = 1e-5
    for name, f, gf, hf in forward_panel(1):
        fd = (f(x + h) - f(x - h)) / (2 * h)
        np.testing.assert_allclose(gf(x)[..., 0], fd, atol=1e-8, err_msg=name)
        fd2 = (gf(x + h)[..., 0] - gf(x - h)[..., 0]) / (2 * h)
        np.testing.assert_allclose(hf(x)[..., 0, 0], fd2, atol=1e-7, err_msg=name)


def test_forward_residual_small_run():
    out = forward_residual([0.3], Y, const(0.8, -0.2), [0.0, 0.1, 0.2], 2000, q=0.5, seed=1, dt=0.01, N=10)
    assert out["pass"]
    assert out["norm"][0] == 0.0


def test_psi_of_point_mass_matches_kernel():
    coeffs = const(0.5, 0.1)
    rep = estimate_psi(DiracDelta([0.0]), coeffs, [0.0, 0.2], 300, seed=5, dt=0.01, N=6, with_generator=False)
    k = estimate_kernel([0.0], DiracDelta([0.0]), coeffs, [0.0, 0.2], 300, seed=5, dt=0.01)[1]
    h = hermite_functions(6, k.samples[:, 0]).mean(axis=1)
    np.testing.assert_allclose(rep.psi[1], h, atol=1e-14)


# ---- semigroup and generator

def test_semigroup_trivial_times():
    out = semigroup_estimate([PairingObservable(Y, "g"), AliveIndicator()], Y, const(0.5, 0.1), 0.0, 0.0, 5, dt=0.01)
    for row in out["rows"]:
        assert row["diff"] == 0.0 and row["pass"]
    assert out["T_one"] == 1


def test_semigroup_agrees():
    obs = [PairingObservable(GaussianDensity([0.5], 0.5), "g"), AliveIndicator()]
    out = semigroup_estimate(obs, Y, const(0.6, 0.2), 0.1, 0.1, 200, seed=0, dt=0.01, M_inner=32)
    assert all(r["pass"] for r in out["rows"])


def test_observables_on_cemetery():
    from distflow.flow import CEMETERY

    assert PairingObservable(Y)(CEMETERY) == 0.0
    assert AliveIndicator()(CEMETERY) == 0.0
    assert PairingObservable(Y)(Y) == pytest.approx(1 / math.sqrt(4 * math.pi))


def _analytic_generator(s, b, phi):
    # 1/2 s^2 <phi, y''> - b <phi, y'> for y = N(0, 1)
    g = lambda x: np.exp(-(x**2) / 2) / math.sqrt(2 * math.pi)
    g1 = lambda x: -x * g(x)
    g2 = lambda x: (x**2 - 1) * g(x)
    a = quad(lambda x: float(phi.evaluate(x)) * g2(x), -20, 20)[0]
    c = quad(lambda x: float(phi.evaluate(x)) * g1(x), -20, 20)[0]
    return 0.5 * s**2 * a - b * c


def test_generator_analytic_side():
    phi = hermite_transform(lambda p: np.exp(-((p[..., 0] - 0.5) ** 2)), S12)
    out = generator_special_case(Y, const(0.7, 0.3), phi, [0.01, 0.02], M=200, dt=0.01)
    assert out["analytic"] == pytest.approx(_analytic_generator(0.7, 0.3, phi), abs=1e-6)


def test_generator_drift_sign():
    phi = hermite_transform(lambda p: np.exp(-((p[..., 0] - 0.5) ** 2)), S12)
    a = generator_special_case(Y, const(0.0, 0.3), phi, [0.01], M=10, dt=0.01)["analytic"]
    b = generator_special_case(Y, const(0.0, -0.3), phi, [0.01], M=10, dt=0.01)["analytic"]
    assert a == pytest.approx(-b, rel=1e-12) and a != 0


def test_generator_estimate_matches():
    phi = hermite_transform(lambda p: np.exp(-((p[..., 0] - 0.5) ** 2)), S12)
    out = generator_special_case(Y, const(0.7, 0.3), phi, [0.002, 0.004, 0.006, 0.008, 0.01], M=10000, dt=1e-3)
    assert out["pass"]
