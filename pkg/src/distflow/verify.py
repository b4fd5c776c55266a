"""The acceptance battery: twelve checks with closed-form or independent oracles.

Each check returns a CriterionResult whose ``summary`` is deterministic for a
given seed (no timings), so summaries can be compared byte for byte across
worker counts.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .distribution import (
    CoefficientMatrix,
    DiracDelta,
    Fields,
    GaussianDensity,
    HermiteTruncation,
    gaussian_coeffs,
)
from .evolution import (
    AliveIndicator,
    PairingObservable,
    estimate_psi,
    evolution_residual,
    forward_residual,
    semigroup_estimate,
)
from .flow import conservation_check, evolve_flow, translation_invariance_check
from .hermite import QuadratureRule, TruncationScheme, basis_vector, hermite_functions, hermite_transform
from .monotonicity import ConstantOperatorPair, monotonicity_lhs
from .sde import refine_brownian, sample_brownian, simulate_path, strong_error
from . import rng
from .sobolev import (
    classify_dirac_growth,
    dirac_cauchy_degree,
    dirac_partial_sums,
    dirac_tail_bound,
    norm_weights,
    sobolev_norm,
)

__all__ = ["CriterionResult", "CRITERIA", "run_criterion", "run_suite", "format_line"]


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    observed: dict
    expected: str
    runtime: float = field(default=0.0, compare=False)

    def summary(self) -> str:
        return json.dumps(
            {"number": self.number, "name": self.name, "passed": self.passed, "observed": self.observed, "expected": self.expected},
            sort_keys=True,
        )


def format_line(r: CriterionResult) -> str:
    tag = "PASS" if r.passed else "FAIL"
    return f"[{tag}] {r.number:2d} {r.name}: {r.expected} | observed {json.dumps(r.observed, sort_keys=True)} ({r.runtime:.1f}s)"


def _g(mean, var, mass=1.0):
    return GaussianDensity(np.atleast_1d(np.asarray(mean, dtype=float)), np.eye(1) * var, mass)


def _smooth_coeffs():
    """Gaussian-bump coefficients on R: fields are smooth, bounded and Lipschitz."""
    sigma = _g(0.5, 2.0, 0.8)
    b = _g(-0.3, 1.0, 0.5)
    return CoefficientMatrix(((sigma,),), (b,)), sigma, b


# ---------------------------------------------------------------- criteria

def c01_hermite_sobolev(seed: int, workers: int, level: str) -> CriterionResult:
    ps = (-1.0, -0.5, 0.0, 0.5, 1.0)
    worst_rel, worst_gram = 0.0, 0.0
    for d in (1, 2):
        scheme = TruncationScheme(d, 20)
        quad = QuadratureRule.gauss_hermite(32)
        # coefficients of h_k recovered by the quadrature transform, not set by hand
        for k in scheme.indices[:: 7 if d == 2 else 1]:
            def f(x, k=k):
                v = np.ones(x.shape[:-1])
                for a in range(d):
                    v = v * hermite_functions(int(k[a]), x[..., a])[int(k[a])]
                return v

            c = hermite_transform(f, scheme, quad)
            n = int(k.sum())
            for p in ps:
                exact = (2 * n + d) ** p
                worst_rel = max(worst_rel, abs(sobolev_norm(c, p) - exact) / exact)
        nodes = quad.grid(d).reshape(-1, d)
        w = np.ones(len(nodes))
        for wa in np.meshgrid(*([quad.weights] * d), indexing="ij"):
            w = w * wa.reshape(-1)
        V = np.stack([basis_vector(scheme, k).evaluate(nodes) for k in scheme.indices], axis=1)
        G = V.T @ (w[:, None] * V)
        off = G - np.diag(np.diag(G))
        worst_gram = max(worst_gram, float(np.abs(off).max()), float(np.abs(np.diag(G) - 1).max()))
    ok = worst_rel <= 1e-12 and worst_gram <= 1e-10
    return CriterionResult(1, "hermite-sobolev calculus", ok, {"max_rel_norm_error": worst_rel, "max_gram_error": worst_gram}, "norm rel err <= 1e-12, Gram err <= 1e-10")


def c02_dirac_threshold(seed: int, workers: int, level: str) -> CriterionResult:
    n_hi = 100000 if level == "quick" else 1000000
    hi = classify_dirac_growth(0.3, 1, 1000, n_hi)
    lo = classify_dirac_growth(0.2, 1, 1000, n_hi)
    N_star = dirac_cauchy_degree(0.3, 1e-3)
    tail_at = dirac_tail_bound(0.3, int(N_star))
    # the analytic tail bound must dominate the brute-force increments it replaces
    ps = dirac_partial_sums(0.3, 1, n_hi)
    n_mid = n_hi // 10
    bound_holds = bool(ps[-1] - ps[n_mid] <= dirac_tail_bound(0.3, n_mid))
    ok = hi["verdict"] == "cauchy" and lo["verdict"] == "divergent" and tail_at < 1e-3 and bound_holds
    obs = {
        "slope_q0.3": hi["slope"],
        "slope_q0.2": lo["slope"],
        "verdict_q0.3": hi["verdict"],
        "verdict_q0.2": lo["verdict"],
        "cauchy_degree_q0.3": N_star,
        "tail_bound_at_cauchy_degree": tail_at,
        "tail_bound_dominates_partial_sums": bound_holds,
    }
    return CriterionResult(2, "dirac threshold q > d/4", ok, obs, "q=0.3 cauchy with tail < 1e-3, q=0.2 divergent, slope margin 0.05")


def c03_monotonicity(seed: int, workers: int, level: str) -> CriterionResult:
    g = rng.generator(seed, rng.SAMPLING, 3)
    scheme = TruncationScheme(1, 32)
    n = 1000
    worst = -math.inf
    worst_abs = 0.0
    for _ in range(n):
        s, b = g.uniform(-2, 2, 2)
        phi = _rand_phi(g, scheme)
        r = monotonicity_lhs(ConstantOperatorPair([[s]], [b], 1.0, 2.0), phi) / sobolev_norm(phi, 0.0) ** 2
        worst = max(worst, r)
        worst_abs = max(worst_abs, abs(r))
    scale_err = 0.0
    for _ in range(100):
        s = g.uniform(-2, 2, 1)
        phi = _rand_phi(g, scheme)
        for p in (0.0, 0.5, 2.0):
            a = monotonicity_lhs(ConstantOperatorPair([[s[0]]], [0.0], p), phi)
            b2 = monotonicity_lhs(ConstantOperatorPair([[2 * s[0]]], [0.0], p), phi)
            scale_err = max(scale_err, abs(b2 - 4 * a) / abs(4 * a))
    ok = worst <= 1e-8 and scale_err <= 1e-12
    return CriterionResult(3, "monotonicity identity p=1", ok, {"max_ratio": worst, "max_abs_ratio": worst_abs, "max_scaling_rel_error": scale_err}, "LHS/||phi||_0^2 <= 1e-8; LHS(2s) = 4 LHS(s) to 1e-12")


def _rand_phi(g, scheme):
    from .hermite import HermiteCoeffs

    return HermiteCoeffs(scheme, g.standard_normal(scheme.size))


def c04_dirac_ito(seed: int, workers: int, level: str) -> CriterionResult:
    coeffs, sigma, b = _smooth_coeffs()
    y = DiracDelta(np.zeros(1))
    # direct Ito coefficients, written out independently of the pairing code
    def s_fn(x):
        return 0.8 * np.exp(-((x - 0.5) ** 2) / 4.0) / math.sqrt(4.0 * math.pi)

    def b_fn(x):
        return 0.5 * np.exp(-((x + 0.3) ** 2) / 2.0) / math.sqrt(2.0 * math.pi)

    direct = Fields.from_functions(s_fn, b_fn, 1)
    tests = [_g(0.0, 1.0), _g(0.4, 0.25), _g(-1.0, 2.0), _g(0.2, 0.1), _g(1.0, 0.5, 3.0)]
    worst = 0.0
    seeds = [seed, seed + 1, seed + 2]
    for sd in seeds:
        bm = sample_brownian(1.0, 1e-3, 1, sd, 4, workers=workers)
        fl = evolve_flow(y, coeffs, bm, workers=workers)
        X = simulate_path(direct, np.zeros(1), bm, workers=workers)
        obs = fl.observables(tests)
        ref = np.stack([t.evaluate(X.states) for t in tests], axis=-1)
        worst = max(worst, float(np.abs(obs - ref).max()))
    return CriterionResult(4, "dirac flow equals Ito solution", worst <= 1e-10, {"max_abs_difference": worst, "seeds": seeds}, "|<f, Y_t> - f(X_t)| <= 1e-10")


def c05_translation(seed: int, workers: int, level: str) -> CriterionResult:
    coeffs, _, _ = _smooth_coeffs()
    y = _g(0.0, 1.0)
    bm = sample_brownian(1.0, 1e-3, 1, seed, 4, workers=workers)
    devs = {str(x): translation_invariance_check(y, coeffs, x, bm) for x in (1.0, -1.0, 5.0, -5.0)}
    worst = max(devs.values())
    return CriterionResult(5, "translation invariance", worst <= 1e-9, {"deviation": devs}, "max |x + z_t(tau_x y) - X_t(x)| <= 1e-9")


def c06_conservation(seed: int, workers: int, level: str) -> CriterionResult:
    coeffs, _, _ = _smooth_coeffs()
    out = {}
    for mass in (1.0, 2.5):
        y = _g(0.3, 0.7, mass)
        bm = sample_brownian(1.0, 1e-3, 1, seed, 3, workers=workers)
        fl = evolve_flow(y, coeffs, bm, workers=workers)
        out[str(mass)] = conservation_check(fl)["max_error"]
    worst = max(out.values())
    return CriterionResult(6, "conservation of mass", worst <= 1e-8, {"max_mass_error": out}, "|int Y_t - int y| <= 1e-8")


def c07_explosion(seed: int, workers: int, level: str) -> CriterionResult:
    dt = 1e-4
    fields = Fields.from_functions(lambda x: 0.0 * x, lambda x: x**2, 1)
    bm = sample_brownian(2.0, dt, 1, seed, 1, workers=workers)
    res = simulate_path(fields, np.ones(1), bm, workers=workers)
    eta = float(res.eta[0])
    ok = abs(eta - 1.0) <= 5 * dt
    return CriterionResult(
        7,
        "explosion time",
        ok,
        {"eta": eta, "error_in_dt": (eta - 1.0) / dt, "hitting_times": res.hitting_times[0].tolist()},
        "|eta - 1| <= 5 dt at dt = 1e-4",
    )


def c08_evolution(seed: int, workers: int, level: str) -> CriterionResult:
    y = _g(0.0, 1.0)
    coeffs = CoefficientMatrix.constant([[1.0]], [0.0])
    t_grid = np.linspace(0.0, 0.5, 11)
    dt = 1e-2
    rep = estimate_psi(y, coeffs, t_grid, 10000, seed=seed, N=12, dt=dt, workers=workers)
    # dt error: the same noise refined by a Brownian bridge to dt/2
    fine = estimate_psi(y, coeffs, t_grid, 10000, seed=seed, N=12, dt=dt, workers=workers, with_generator=False, refine=1)
    dt_err = np.abs(rep.psi - fine.psi)[:, :10]
    exact = np.array([gaussian_coeffs(_g(0.0, 1.0 + t), rep.scheme) for t in rep.times])
    err = np.abs(rep.psi - exact)[:, :10]
    se = rep.stderr[:, :10]
    # combined error over the first 10 coefficients at each time, as for the residuals
    norm_err = np.linalg.norm(err, axis=1)
    norm_budget = 3 * (np.linalg.norm(se, axis=1) + np.linalg.norm(dt_err, axis=1))
    coeff_ok = bool(np.all((norm_err <= norm_budget) | (norm_err <= 1e-14)))
    ratio = float(max(e / b for e, b in zip(norm_err, norm_budget) if e > 1e-14))
    live = err > 1e-14
    worst_z = float((err[live] / se[live]).max()) if live.any() else 0.0
    res = evolution_residual(rep)
    ok = coeff_ok and res["pass"]
    obs = {
        "max_error_over_budget": ratio,
        "max_coefficient_z": worst_z,
        "coeffs_pass": coeff_ok,
        "residual_pass": res["pass"],
        "max_differential_ratio": max(r["norm"] / (r["mc"] + r["fd"]) for r in res["differential"]),
        "max_integrated_ratio": max(r["norm"] / (r["mc"] + r["fd"]) for r in res["integrated"]),
        "max_dt_error": float(dt_err.max()),
    }
    return CriterionResult(8, "evolution equation", ok, obs, "||psi(t) - Gaussian(0, 1+t)||, first 10 coefficients, <= 3 (||se|| + ||dt err||); residuals within the same budget")


def c09_forward(seed: int, workers: int, level: str) -> CriterionResult:
    y = _g(0.0, 1.0)
    coeffs = CoefficientMatrix.constant([[1.0]], [0.0])
    fr = forward_residual(0.0, y, coeffs, np.linspace(0.0, 0.5, 6), 10000, 0.5, seed=seed, dt=1e-2, workers=workers)
    worst_panel = max(abs(r["value"]) / (r["mc"] + r["dt_err"]) for row in fr["panel"][1:] for r in row)
    worst_norm = max(n / (a + b) for n, a, b in zip(fr["norm"][1:], fr["norm_mc"][1:], fr["norm_dt"][1:]))
    moment_ok = all(m["pass"] for m in fr["first_moment"])
    obs = {"max_panel_ratio": worst_panel, "max_norm_ratio": worst_norm, "first_moment_pass": moment_ok}
    return CriterionResult(9, "forward equation", fr["pass"], obs, "residuals within 3x (MC + dt) budget; first moment within MC error")


def c10_strong_order(seed: int, workers: int, level: str) -> CriterionResult:
    paths = 200 if level == "quick" else 1000
    dts = [2.0**-5, 2.0**-6, 2.0**-7, 2.0**-8]
    bm = sample_brownian(1.0, dts[0], 1, seed, paths, workers=workers)
    mult = Fields.from_functions(np.sin, lambda x: 0.0 * x, 1)
    add = Fields.from_functions(lambda x: 0.5 + 0.0 * x, lambda x: -np.sin(x), 1)
    om = strong_error(mult, np.ones(1), bm, dts)["order"]
    oa = strong_error(add, np.ones(1), bm, dts)["order"]
    ok = abs(om - 0.5) <= 0.2 and abs(oa - 1.0) <= 0.3
    return CriterionResult(10, "strong order", ok, {"multiplicative_order": om, "additive_order": oa, "paths": paths}, "0.5 +- 0.2 and 1.0 +- 0.3")


def c11_semigroup(seed: int, workers: int, level: str) -> CriterionResult:
    y = _g(0.0, 1.0)
    coeffs = CoefficientMatrix.constant([[1.0]], [0.2])
    s0 = TruncationScheme(1, 4)
    obs = [
        PairingObservable(HermiteTruncation(basis_vector(s0, [0]), 0.0), "h_0"),
        PairingObservable(HermiteTruncation(basis_vector(s0, [1]), 0.0), "h_1"),
        PairingObservable(_g(0.5, 0.5), "gauss"),
        AliveIndicator(),
    ]
    M = 400 if level == "quick" else 2000
    r = semigroup_estimate(obs, y, coeffs, 0.25, 0.25, M, seed=seed, dt=1e-2, M_inner=64, workers=workers)
    ok = all(row["pass"] for row in r["rows"][:3]) and r["T_one"] == 1
    observed = {row["name"]: row["z"] for row in r["rows"][:3]}
    observed["T_one"] = r["T_one_str"]
    return CriterionResult(11, "markov semigroup", ok, observed, "|single - two-stage| <= 3 sd for 3 observables; T_t 1 = 1")


def c12_determinism(seed: int, workers: int, level: str) -> CriterionResult:
    picks = (c04_dirac_ito, c05_translation, c10_strong_order, c08_evolution) if level == "full" else (c04_dirac_ito, c05_translation, c10_strong_order)
    same = {}
    for fn in picks:
        a = fn(seed, 1, "quick").summary()
        b = fn(seed, max(3, workers), "quick").summary()
        same[fn.__name__.split("_", 1)[1]] = a == b
    return CriterionResult(12, "determinism across workers", all(same.values()), {"identical": same}, "byte-identical summaries for 1 and 3 workers")


CRITERIA = {
    1: c01_hermite_sobolev,
    2: c02_dirac_threshold,
    3: c03_monotonicity,
    4: c04_dirac_ito,
    5: c05_translation,
    6: c06_conservation,
    7: c07_explosion,
    8: c08_evolution,
    9: c09_forward,
    10: c10_strong_order,
    11: c11_semigroup,
    12: c12_determinism,
}


def run_criterion(number: int, seed: int = 0, workers: int = 1, level: str = "quick") -> CriterionResult:
    t0 = time.perf_counter()
    r = CRITERIA[number](seed, workers, level)
    r.runtime = time.perf_counter() - t0
    return r


def run_suite(level: str = "quick", workers: int = 1, seed: int = 0, only=None, echo=None) -> list[CriterionResult]:
    if level not in ("quick", "full"):
        raise ValueError("level must be quick or full")
    out = []
    for n in only or sorted(CRITERIA):
        r = run_criterion(n, seed, workers, level)
        if echo:
            echo(format_line(r))
        out.append(r)
    return out
