import numpy as np
import pytest
from scipy.integrate import solve_ivp

from distflow.distribution import (
    CoefficientMatrix,
    ConstantFunction,
    DiracDelta,
    GaussianDensity,
    HermiteTruncation,
    pair,
    pair_translated,
    translate,
)
from distflow.flow import (
    CEMETERY,
    conservation_check,
    evolve_flow,
    flow_csv,
    strong_solution_residual,
    translation_invariance_check,
    uniqueness_check,
    weak_limit_check,
)
from distflow.hermite import TruncationScheme, basis_vector
from distflow.sde import refine_brownian, sample_brownian

Y = GaussianDensity([0.0], 1.0)
SMOOTH = CoefficientMatrix(((GaussianDensity([0.5], 2.0, 0.8),),), (GaussianDensity([-0.3], 1.0, 0.5),))
TESTS = [GaussianDensity([0.0], 1.0), GaussianDensity([1.0], 0.5)]


def test_zero_coefficients_freeze_the_flow():
    bm = sample_brownian(1.0, 0.01, 1, seed=0, paths=3)
    fl = evolve_flow(Y, CoefficientMatrix.zero(1), bm)
    assert not fl.z.states.any()
    obs = fl.observables(TESTS)
    np.testing.assert_array_equal(obs, np.broadcast_to(obs[:, :1], obs.shape))
    r = strong_solution_residual(fl, N=8)
    assert np.abs(r["residual"]).max() == 0.0


def test_constant_distribution_is_fixed():
    y = ConstantFunction(3.0)
    bm = sample_brownian(0.5, 0.01, 1, seed=1, paths=2)
    fl = evolve_flow(y, CoefficientMatrix.constant([[0.0]], [0.0]), bm)
    assert translate(y, 4.0) is y
    assert fl.state(10, 1).value == 3.0


def test_state_rebuilds_translate_and_cemetery():
    bm = sample_brownian(2.0, 1e-3, 1, seed=0, paths=1)
    coeffs = CoefficientMatrix((( ConstantFunction(0.0),),), (ConstantFunction(1.0),))
    fl = evolve_flow(Y, coeffs, bm)
    st = fl.state(100, 0)
    assert isinstance(st, GaussianDensity) and st.mean[0] == pytest.approx(0.1, abs=1e-12)


def test_cemetery_is_singleton():
    assert type(CEMETERY)() is CEMETERY


def test_strong_residual_decreases_with_dt():
    dts = [1e-2, 5e-3, 2.5e-3]
    bm = sample_brownian(1.0, dts[0], 1, seed=3, paths=8)
    norms = []
    for lev, dt in enumerate(dts):
        path = bm if lev == 0 else refine_brownian(bm, lev)
        r = strong_solution_residual(evolve_flow(Y, SMOOTH, path), N=10)
        norms.append(r["mean_norm"])
    slope = np.polyfit(np.log(dts), np.log(norms), 1)[0]
    assert slope >= 0.4


def test_strong_residual_with_tests_matches_basis_rows():
    bm = sample_brownian(0.5, 0.01, 1, seed=2, paths=3)
    fl = evolve_flow(Y, SMOOTH, bm)
    s = TruncationScheme(1, 6)
    full = strong_solution_residual(fl, N=6)
    one = strong_solution_residual(fl, tests=[basis_vector(s, [2])])
    np.testing.assert_allclose(one["residual"][..., 0], full["residual"][..., 2], atol=1e-14)


def test_translation_invariance_zero_shift_exact():
    bm = sample_brownian(1.0, 0.01, 1, seed=0, paths=3)
    assert translation_invariance_check(Y, SMOOTH, 0.0, bm) == 0.0


@pytest.mark.parametrize("x", [1.0, -5.0])
def test_translation_invariance_smooth(x):
    bm = sample_brownian(1.0, 0.01, 1, seed=0, paths=3)
    assert translation_invariance_check(Y, SMOOTH, x, bm) <= 1e-9


def test_translation_invariance_constant_fields():
    bm = sample_brownian(1.0, 0.01, 1, seed=0, paths=3)
    assert translation_invariance_check(Y, CoefficientMatrix.constant([[0.7]], [0.2]), 2.0, bm) <= 1e-12


def test_conservation_with_mass():
    bm = sample_brownian(1.0, 0.01, 1, seed=0, paths=3)
    fl = evolve_flow(GaussianDensity([0.0], 1.0, 2.5), SMOOTH, bm)
    out = conservation_check(fl)
    assert out["mass"] == 2.5 and out["max_error"] <= 1e-8 and out["states_checked"] > 0


def test_conservation_2d():
    y = GaussianDensity([0.0, 0.0], 1.0)
    coeffs = CoefficientMatrix.constant(np.eye(2) * 0.5, [0.1, 0.0])
    fl = evolve_flow(y, coeffs, sample_brownian(0.5, 0.05, 2, seed=0, paths=2))
    assert conservation_check(fl)["max_error"] <= 1e-8


def test_weak_limit_decays():
    zs = np.arange(1.0, 11.0)
    out = weak_limit_check(Y, zs, TESTS)
    assert out["decays"] and out["final"].max() < 1e-6


def test_weak_limit_constant_does_not_decay():
    out = weak_limit_check(ConstantFunction(1.0), np.arange(1.0, 11.0), TESTS)
    assert not out["decays"]


def test_weak_limit_zero_test():
    out = weak_limit_check(Y, np.arange(1.0, 4.0), [ConstantFunction(0.0)])
    assert out["decays"] and not out["table"].any()


def _drift(z):
    return float(pair_translated(SMOOTH.b[0], Y, np.array([z])))


def test_deterministic_flow_matches_forward_euler():
    dt, n = 0.01, 100
    coeffs = CoefficientMatrix(((ConstantFunction(0.0),),), SMOOTH.b)
    fl = evolve_flow(Y, coeffs, sample_brownian(1.0, dt, 1, seed=0, paths=1))
    z = [0.0]
    for _ in range(n):
        z.append(z[-1] + dt * _drift(z[-1]))
    np.testing.assert_allclose(fl.z.states[0, :, 0], z, atol=1e-8)


def test_deterministic_flow_converges_to_ode():
    coeffs = CoefficientMatrix(((ConstantFunction(0.0),),), SMOOTH.b)
    ref = solve_ivp(lambda t, z: [_drift(z[0])], (0, 1), [0.0], rtol=1e-11, atol=1e-13).y[0, -1]
    errs = []
    dts = [0.02, 0.01, 0.005]
    for dt in dts:
        fl = evolve_flow(Y, coeffs, sample_brownian(1.0, dt, 1, seed=0, paths=1))
        errs.append(abs(fl.z.states[0, -1, 0] - ref))
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.15)


def test_uniqueness_surrogate_shrinks():
    bm = sample_brownian(1.0, 0.02, 1, seed=0, paths=16)
    diffs = []
    for lev in range(3):
        path = bm if lev == 0 else refine_brownian(bm, lev)
        diffs.append(uniqueness_check(Y, SMOOTH, path, TESTS)["mean_path_difference"])
    assert diffs[2] < diffs[0]


def test_observables_equal_pairings():
    bm = sample_brownian(0.2, 0.01, 1, seed=0, paths=2)
    fl = evolve_flow(Y, SMOOTH, bm)
    obs = fl.observables(TESTS)
    for i in (0, 7, 20):
        for k, phi in enumerate(TESTS):
            assert obs[1, i, k] == pytest.approx(pair(phi, fl.state(i, 1)), rel=1e-12)


def test_dirac_flow_transports_pairing():
    f = HermiteTruncation(basis_vector(TruncationScheme(1, 6), [1]))
    y = DiracDelta([0.0])
    coeffs = CoefficientMatrix(((GaussianDensity([0.0], 1.0),),), (ConstantFunction(0.0),))
    fl = evolve_flow(y, coeffs, sample_brownian(0.5, 0.01, 1, seed=0, paths=2))
    obs = fl.observables([f])[..., 0]
    np.testing.assert_allclose(obs, f.evaluate(fl.z.states[..., 0]), rtol=1e-13)


def test_flow_csv_header_and_rows():
    bm = sample_brownian(0.1, 0.01, 1, seed=0, paths=1)
    text = flow_csv(evolve_flow(Y, SMOOTH, bm), TESTS, ["g0", "g1"])
    lines = text.strip().split("\n")
    assert lines[0] == "t,z_1,alive,g0,g1"
    assert len(lines) == 12
