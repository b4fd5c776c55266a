import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distflow.distribution import Fields
from distflow.sde import QUANTUM, SimulationConfig, quantize, refine_brownian, sample_brownian, simulate, simulate_path, strong_error


def test_brownian_increments_are_quantized():
    bm = sample_brownian(1.0, 0.01, 2, seed=3, paths=5)
    assert bm.increments.shape == (5, 100, 2)
    r = bm.increments / QUANTUM
    np.testing.assert_array_equal(r, np.round(r))


def test_brownian_moments():
    bm = sample_brownian(1.0, 0.05, 1, seed=1, paths=10000)
    wT = bm.values()[:, -1, 0]
    se = math.sqrt(2 / 10000)  # sd of the sample second moment of N(0,1)
    assert abs(np.mean(wT**2) - 1.0) <= 4 * se
    assert abs(np.mean(wT)) <= 4 / math.sqrt(10000)


def test_paths_do_not_depend_on_batch():
    a = sample_brownian(0.5, 0.01, 1, seed=9, paths=6)
    b = sample_brownian(0.5, 0.01, 1, seed=9, paths=2, first_path=4)
    np.testing.assert_array_equal(a.increments[4:], b.increments)


def test_workers_do_not_change_samples():
    a = sample_brownian(0.5, 0.01, 2, seed=2, paths=7, workers=1)
    b = sample_brownian(0.5, 0.01, 2, seed=2, paths=7, workers=3)
    np.testing.assert_array_equal(a.increments, b.increments)


def test_streams_are_independent():
    a = sample_brownian(0.5, 0.01, 1, seed=2, paths=1)
    b = sample_brownian(0.5, 0.01, 1, seed=2, paths=1, stream=(4,))
    assert not np.array_equal(a.increments, b.increments)


@given(st.integers(1, 3))
def test_bridge_refinement_is_bit_exact(levels):
    bm = sample_brownian(0.25, 0.01, 2, seed=5, paths=3)
    fine = refine_brownian(bm, levels)
    assert fine.dt == bm.dt / 2**levels
    np.testing.assert_array_equal(fine.coarsened(2**levels), bm.increments)
    np.testing.assert_array_equal(refine_brownian(bm, levels).increments, fine.increments)


def test_refined_increments_have_half_variance():
    bm = sample_brownian(1.0, 0.01, 1, seed=0, paths=400)
    fine = refine_brownian(bm)
    v = fine.increments.var()
    assert abs(v - 0.005) <= 5 * 0.005 * math.sqrt(2 / fine.increments.size)


def test_constant_drift_is_exact():
    bm = sample_brownian(1.0, 0.01, 1, seed=0, paths=2)
    res = simulate_path(Fields.constant([[0.0]], [0.7]), [0.5], bm)
    np.testing.assert_allclose(res.states[:, :, 0], np.broadcast_to(0.5 + 0.7 * res.times, (2, len(res.times))), rtol=1e-13)


def test_constant_diffusion_reproduces_noise():
    bm = sample_brownian(1.0, 0.01, 1, seed=0, paths=3)
    res = simulate_path(Fields.constant([[2.0]], [0.0]), [0.0], bm)
    np.testing.assert_allclose(res.states, 2.0 * bm.values(), atol=1e-13)


def test_simulation_independent_of_workers():
    f = Fields.from_functions(lambda x: 1 + 0.5 * np.sin(x), lambda x: -x)
    bm = sample_brownian(1.0, 0.01, 1, seed=4, paths=9)
    a = simulate_path(f, [0.1], bm, workers=1)
    b = simulate_path(f, [0.1], bm, workers=4)
    np.testing.assert_array_equal(a.states, b.states)


def test_record_every_subsamples():
    f = Fields.constant([[1.0]], [0.0])
    bm = sample_brownian(1.0, 0.01, 1, seed=4, paths=2)
    a = simulate_path(f, [0.0], bm)
    b = simulate_path(f, [0.0], bm, record_every=10)
    np.testing.assert_array_equal(a.states[:, ::10], b.states)


def test_explosion_goes_to_cemetery_and_stays():
    f = Fields.from_functions(lambda x: 0 * x, lambda x: x**2)
    bm = sample_brownian(2.0, 1e-3, 1, seed=0, paths=1)
    res = simulate_path(f, [1.0], bm)
    assert res.exploded[0]
    k = int(np.argmax(~res.alive[0]))
    assert np.all(np.isinf(res.states[0, k:])) and np.all(~res.alive[0, k:])
    assert np.all(np.isfinite(res.states[0, :k]))
    ht = res.hitting_times[0]
    assert np.all(np.diff(ht) >= 0)
    assert res.eta[0] == ht[-1]
    assert 0.9 < res.eta[0] < 1.05


def test_survivors_report_infinite_eta():
    res = simulate_path(Fields.constant([[1.0]], [0.0]), [0.0], sample_brownian(0.1, 0.01, 1, 0, 3))
    assert np.all(np.isinf(res.eta)) and not res.exploded.any()


def test_nonfinite_field_kills_path():
    f = Fields.from_functions(lambda x: 0 * x, lambda x: np.where(x > 0.5, np.nan, 1.0))
    res = simulate_path(f, [0.0], sample_brownian(1.0, 0.01, 1, 0, 1))
    assert res.nonfinite[0] and res.exploded[0]
    assert res.eta[0] == pytest.approx(0.51, abs=0.011)


def test_simulate_wrapper_matches_simulate_path():
    f = Fields.constant([[0.3]], [0.1])
    cfg = SimulationConfig(dt=0.01, T=0.5, seed=6, paths=4)
    a, _ = simulate(f, [0.0], cfg)
    b = simulate_path(f, [0.0], sample_brownian(0.5, 0.01, 1, 6, 4))
    np.testing.assert_array_equal(a.states, b.states)


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        SimulationConfig(thresholds=(10, 5))
    with pytest.raises(ValueError):
        SimulationConfig(dt=0.3, T=1.0)


def test_quantize_is_idempotent():
    v = np.random.default_rng(0).standard_normal(100)
    np.testing.assert_array_equal(quantize(quantize(v)), quantize(v))


DTS = [2.0**-4, 2.0**-5, 2.0**-6, 2.0**-7]


def test_strong_order_deterministic():
    f = Fields.from_functions(lambda x: 0 * x, lambda x: -np.sin(x))
    bm = sample_brownian(1.0, DTS[0], 1, seed=0, paths=2)
    out = strong_error(f, [1.0], bm, DTS)
    assert out["order"] == pytest.approx(1.0, abs=0.2)


def test_strong_order_additive_noise():
    f = Fields.from_functions(lambda x: 0.5 + 0 * x, lambda x: -np.sin(x))
    bm = sample_brownian(1.0, DTS[0], 1, seed=0, paths=200)
    assert strong_error(f, [0.0], bm, DTS)["order"] >= 0.8


def test_strong_order_multiplicative_noise():
    f = Fields.from_functions(lambda x: 0.5 * np.sin(x) + 0.2, lambda x: 0 * x)
    bm = sample_brownian(1.0, DTS[0], 1, seed=0, paths=200)
    order = strong_error(f, [1.0], bm, DTS)["order"]
    assert 0.3 <= order <= 0.8
