"""The S'-valued flow Y_t(y) = tau_{z_t(y)} y and its diagnostics.

The finite-dimensional process z_t(y) is the Euler-Maruyama solution of
dz = sigma-bar(z) dB + b-bar(z) dt started at 0, with fields
sigma-bar(x) = <sigma, tau_x y> and b-bar(x) = <b, tau_x y>.  Distribution
states are never integrated directly; they are reconstructed by translating
y along the recorded z-path.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distribution import (
    CoefficientMatrix,
    Fields,
    TemperedDistribution,
    coefficient_fields,
    pair_translated,
    translate,
    translated_coeffs,
)
from .hermite import HermiteCoeffs, TruncationScheme, derivative_matrix
from .sde import DEFAULT_THRESHOLDS, BrownianPath, PathResult, refine_brownian, simulate_path
from .sobolev import norm_weights

__all__ = [
    "CEMETERY",
    "FlowPath",
    "evolve_flow",
    "observable_values",
    "strong_solution_residual",
    "translation_invariance_check",
    "conservation_check",
    "weak_limit_check",
    "flow_csv",
    "uniqueness_check",
]


class _Cemetery:
    """The absorbing state adjoined to S_p; every observable is 0 there."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "CEMETERY"


CEMETERY = _Cemetery()


@dataclass(frozen=True, eq=False)
class FlowPath:
    """States of Y_t(y) for a bundle of driving paths.

    ``z`` is the PathResult of z_t(y); ``state(i, m)`` rebuilds Y at grid
    index i on path m as translate(y, z) or CEMETERY.
    """

    y: TemperedDistribution
    z: PathResult
    fields: Fields
    brownian: BrownianPath = field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.z.times

    @property
    def alive(self) -> np.ndarray:
        return self.z.alive

    def state(self, i: int, m: int = 0):
        if not self.z.alive[m, i]:
            return CEMETERY
        return translate(self.y, self.z.states[m, i])

    def observables(self, tests: Sequence[TemperedDistribution]) -> np.ndarray:
        """<phi, Y_t> for each test, shape (paths, times, tests); 0 at the cemetery."""
        return np.stack([observable_values(phi, self.y, self.z.states, self.z.alive) for phi in tests], axis=-1)


def observable_values(phi: TemperedDistribution, y: TemperedDistribution, z: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """<phi, tau_z y> where alive, 0 elsewhere (f(cemetery) := 0)."""
    out = np.zeros(alive.shape)
    if alive.any():
        out[alive] = pair_translated(phi, y, z[alive])
    return out


def evolve_flow(
    y: TemperedDistribution,
    coeffs: CoefficientMatrix,
    brownian: BrownianPath,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    fields: Fields | None = None,
    workers: int = 1,
) -> FlowPath:
    """Simulate z_t(y) from 0 on the given noise and wrap it as a flow of y."""
    if brownian.d != y.d:
        raise ValueError("Brownian dimension does not match y")
    fields = fields or coefficient_fields(coeffs, y)
    z = simulate_path(fields, np.zeros(y.d), brownian, thresholds, workers)
    return FlowPath(y, z, fields, brownian)


def _test_matrix(tests, scheme: TruncationScheme) -> np.ndarray:
    rows = [t.resized(scheme.N).values for t in tests]
    return np.array(rows).T  # (size, n_tests)


def strong_solution_residual(
    flow: FlowPath,
    p: float = 0.0,
    tests: Sequence[HermiteCoeffs] | None = None,
    N: int = 16,
) -> dict:
    """Residual of Y_t = y + sum_j int A_j(Y) dB^j + int L(Y) ds along the flow.

    For a truncated test phi, with c(z) the Hermite coefficients of tau_z y,

        <phi, A_j(Y)> = sum_i sigma-bar_ij(z) <d_i phi, Y>
        <phi, L(Y)>   = 1/2 sum_ij (sigma-bar sigma-bar^t)_ij <d_ij phi, Y>
                        + sum_i b-bar_i(z) <d_i phi, Y>,

    and the stochastic and time integrals are left-point sums on the
    simulation grid.  Without ``tests`` the basis vectors of degree <= N are
    used, and the residual vector's ||.||_{p-1} norm is reported as well.
    Only paths alive on the whole horizon enter.
    """
    y, z = flow.y, flow.z
    d = y.d
    keep = z.alive.all(axis=1)
    Z = z.states[keep]  # (m, n_t, d)
    dW = flow.brownian.increments[keep]
    m, n_t = Z.shape[:2]
    base = TruncationScheme(d, N if tests is None else max(t.N for t in tests))
    if tests is None:
        Phi = np.eye(base.size)
    else:
        Phi = _test_matrix(tests, base)
    wide1, wide2 = base.extended(1), base.extended(2)
    D1 = [derivative_matrix(base, i) for i in range(d)]  # (size1, size0)
    D2 = [[derivative_matrix(wide1, j) @ D1[i] for j in range(d)] for i in range(d)]

    pts = Z.reshape(-1, d)
    c2 = translated_coeffs(y, pts, wide2)  # coefficients of tau_z y up to degree N+2
    c0 = c2[:, : base.size]
    c1 = c2[:, : wide1.size]
    g = (c0 @ Phi).reshape(m, n_t, -1)
    grad = np.stack([(c1 @ (D1[i] @ Phi)).reshape(m, n_t, -1) for i in range(d)], axis=-1)
    hess = np.stack(
        [np.stack([(c2 @ (D2[i][j] @ Phi)).reshape(m, n_t, -1) for j in range(d)], axis=-1) for i in range(d)],
        axis=-2,
    )  # (m, n_t, tests, d, d)
    S = flow.fields.sigma(pts).reshape(m, n_t, d, d)
    B = flow.fields.b(pts).reshape(m, n_t, d)
    A = S @ np.swapaxes(S, -1, -2)
    dt = z.dt

    # <phi, A_j Y> dB^j summed over j, and <phi, L Y> dt, at the left points
    mart = np.einsum("mtki,mtij,mtj->mtk", grad[:, :-1], S[:, :-1], dW)
    drift = 0.5 * np.einsum("mtkij,mtij->mtk", hess[:, :-1], A[:, :-1]) + np.einsum(
        "mtki,mti->mtk", grad[:, :-1], B[:, :-1]
    )
    R = np.zeros_like(g)
    R[:, 1:] = (g[:, 1:] - g[:, :1]) - np.cumsum(mart + drift * dt, axis=1)
    out = {
        "times": z.times,
        "residual": R,
        "max_abs": np.abs(R).max(axis=(0, 1)) if m else np.array([]),
        "mean_max_abs": np.abs(R).max(axis=1).mean(axis=0) if m else np.array([]),
        "paths_used": int(m),
    }
    if tests is None and m:
        w = norm_weights(base, p - 1)
        norms = np.sqrt((R**2 * w).sum(axis=-1))
        out["norm"] = norms.max(axis=1)
        out["mean_norm"] = float(norms.max(axis=1).mean())
    return out


def translation_invariance_check(
    y: TemperedDistribution,
    coeffs: CoefficientMatrix,
    x,
    brownian: BrownianPath,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> float:
    """max_t |x + z_t(tau_x y) - X_t(x)| over the common alive window and all paths.

    z runs with fields built from tau_x y; X starts at x with fields built
    from y.  Both see the same Brownian increments.
    """
    x = np.broadcast_to(np.asarray(x, dtype=float), (y.d,))
    shifted = evolve_flow(translate(y, x), coeffs, brownian, thresholds)
    X = simulate_path(coefficient_fields(coeffs, y), x, brownian, thresholds)
    both = shifted.z.alive & X.alive
    if not both.any():
        return 0.0
    dev = np.abs(x + shifted.z.states - X.states).max(axis=-1)
    return float(dev[both].max())


def _uniform_rule(d: int, half_width: float, h: float):
    t = np.arange(-half_width, half_width + h / 2, h)
    w = np.full(len(t), h)
    w[[0, -1]] = h / 2
    return t, w


def conservation_check(
    flow: FlowPath,
    n_times: int = 21,
    half_width: float = 40.0,
    h: float | None = None,
) -> dict:
    """max |int Y_t - int y| over sampled grid times and alive states.

    The integral of each translated state is computed by the trapezoid rule on
    a fixed grid [-half_width, half_width]^d; cemetery states are skipped.
    """
    y = flow.y
    d = y.d
    mass = y.integral()
    h = h or {1: 0.01, 2: 0.1, 3: 0.4}[d]
    t, w = _uniform_rule(d, half_width, h)
    mesh = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)
    wts = np.ones(len(mesh))
    for wa in np.meshgrid(*([w] * d), indexing="ij"):
        wts = wts * wa.reshape(-1)
    idx = np.unique(np.linspace(0, len(flow.times) - 1, n_times).astype(int))
    worst = 0.0
    checked = 0
    for i in idx:
        for m in range(flow.z.states.shape[0]):
            if not flow.z.alive[m, i]:
                continue
            zi = flow.z.states[m, i]
            if np.any(np.abs(zi) > half_width / 2):
                raise ValueError("state drifted outside the quadrature window; enlarge half_width")
            val = float(translate(y, zi).evaluate(mesh) @ wts)
            worst = max(worst, abs(val - mass))
            checked += 1
    return {"mass": mass, "max_error": worst, "states_checked": checked}


def weak_limit_check(
    y: TemperedDistribution,
    zs,
    tests: Sequence[TemperedDistribution],
    tol: float = 1e-6,
) -> dict:
    """|<phi, tau_z y>| along a diverging sequence of points z.

    ``decays`` is True when every test is below ``tol`` at the last point and
    the sequence is non-increasing up to a 1e-12 slack.
    """
    zs = np.asarray(zs, dtype=float)
    if zs.ndim == 1:
        zs = zs[:, None] if y.d == 1 else zs[None, :]
    table = np.abs(np.stack([pair_translated(phi, y, zs) for phi in tests], axis=-1))
    monotone = bool(np.all(np.diff(table, axis=0) <= 1e-12 + 1e-9 * table[:-1]))
    return {
        "z": zs,
        "table": table,
        "decays": bool(np.all(table[-1] < tol) and monotone),
        "final": table[-1],
    }


def flow_csv(flow: FlowPath, tests: Sequence[TemperedDistribution] = (), names: Sequence[str] = (), path: int = 0) -> str:
    """CSV series: t, z_1..z_d, alive, then one column per observable."""
    obs = flow.observables(tests)[path] if tests else np.zeros((len(flow.times), 0))
    names = list(names) or [f"obs_{i}" for i in range(len(tests))]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = flow.y.d
    w.writerow(["t"] + [f"z_{a + 1}" for a in range(d)] + ["alive"] + names)
    for i, t in enumerate(flow.times):
        zrow = flow.z.states[path, i]
        w.writerow([repr(float(t))] + [repr(float(v)) for v in zrow] + [int(flow.z.alive[path, i])] + [repr(float(v)) for v in obs[i]])
    return buf.getvalue()


def uniqueness_check(
    y: TemperedDistribution,
    coeffs: CoefficientMatrix,
    brownian: BrownianPath,
    tests: Sequence[TemperedDistribution],
    levels: int = 2,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> dict:
    """Flows on the same Brownian path at dt and dt / 2**levels, compared on the coarse grid.

    Returns the largest observable difference over times before either flow
    dies, per path and overall.
    """
    coarse = evolve_flow(y, coeffs, brownian, thresholds)
    fine = evolve_flow(y, coeffs, refine_brownian(brownian, levels), thresholds)
    stride = 2**levels
    a = coarse.observables(tests)
    b = fine.observables(tests)[:, ::stride]
    both = coarse.alive & fine.alive[:, ::stride]
    diff = np.where(both[..., None], np.abs(a - b), 0.0).max(axis=(1, 2))
    return {
        "dt": brownian.dt,
        "fine_dt": brownian.dt / stride,
        "max_difference": float(diff.max()) if diff.size else 0.0,
        "mean_path_difference": float(diff.mean()) if diff.size else 0.0,
        "per_path": diff,
    }
