"""Transition kernels, nonlinear convolution, and the evolution / forward equations.

Everything is estimated from sample clouds of the driving diffusion
X(x0, y, t) = x0 + z_t(tau_{x0} y), simulated directly from x0 with the
fields of y.  Cemetery samples are kept in the cloud with f(cemetery) = 0, so
averages always divide by the full path count M.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import rng
from .distribution import (
    CoefficientMatrix,
    Fields,
    HermiteTruncation,
    TemperedDistribution,
    apply_L,
    coefficient_fields,
    pair_translated,
    to_coeffs,
    translate,
    translated_coeffs,
)
from .flow import CEMETERY, evolve_flow
from .hermite import (
    HermiteCoeffs,
    QuadratureRule,
    TruncationScheme,
    basis_vector,
    derivative_matrix,
    hermite_transform,
    integrals,
)
from .sde import DEFAULT_THRESHOLDS, BrownianPath, refine_brownian, sample_brownian, simulate_path
from .sobolev import TruncationWarning, dirac_coeffs, norm_weights, sobolev_norm

__all__ = [
    "HypothesisViolation",
    "EmpiricalKernel",
    "EvolutionReport",
    "estimate_kernel",
    "nonlinear_convolution",
    "generator_of_translates",
    "estimate_psi",
    "evolution_residual",
    "adjoint_apply",
    "forward_panel",
    "forward_residual",
    "PairingObservable",
    "AliveIndicator",
    "semigroup_estimate",
    "generator_special_case",
]


class HypothesisViolation(RuntimeError):
    """A run left the regime (bounded fields, no explosion) the estimator assumes."""


def _grid_indices(t_grid, dt: float) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    idx = np.rint(t / dt).astype(int)
    if np.any(np.abs(idx * dt - t) > 1e-9 * max(dt, 1.0)) or np.any(idx < 0):
        raise ValueError("grid times must be nonnegative multiples of dt")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("grid times must be increasing")
    return idx


# ------------------------------------------------------------------ kernels

@dataclass(frozen=True, eq=False)
class EmpiricalKernel:
    """Equal-weight sample cloud of X at time t; inf rows are cemetery mass."""

    t: float
    samples: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @property
    def alive(self) -> np.ndarray:
        return np.isfinite(self.samples).all(axis=1)

    @property
    def weight(self) -> Fraction:
        return Fraction(1, self.M)

    def total_weight(self) -> Fraction:
        return self.weight * self.M

    @property
    def alive_fraction(self) -> Fraction:
        return Fraction(int(self.alive.sum()), self.M)

    @property
    def cemetery_mass(self) -> Fraction:
        return 1 - self.alive_fraction

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> tuple[float, float]:
        """Mean and standard error of f(X) with f = 0 on the cemetery."""
        vals = np.zeros(self.M)
        a = self.alive
        if a.any():
            vals[a] = np.asarray(f(self.samples[a]), dtype=float)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(self.M)) if self.M > 1 else 0.0

    def to_csv(self) -> str:
        lines = ["t," + ",".join(f"x_{a + 1}" for a in range(self.d)) + ",alive"]
        for row, ok in zip(self.samples, self.alive):
            lines.append(",".join([repr(float(self.t))] + [repr(float(v)) for v in row] + [str(int(ok))]))
        return "\n".join(lines) + "\n"


def _simulate_cloud(x0, y, coeffs, t_grid, M, seed, dt, thresholds, fields, workers, refine=0):
    """Simulate M paths on grid dt (bridge-refined ``refine`` times); states at t_grid."""
    idx = _grid_indices(t_grid, dt)
    T = float(idx[-1] * dt) if idx[-1] > 0 else dt
    fields = fields or coefficient_fields(coeffs, y)
    bm = sample_brownian(T, dt, y.d, seed, M, 0, (rng.BROWNIAN,), workers)
    if refine:
        bm = refine_brownian(bm, refine)
    res = simulate_path(fields, x0, bm, thresholds, workers, record_every=2**refine)
    return idx, res, bm, fields


def estimate_kernel(
    x0,
    y: TemperedDistribution,
    coeffs: CoefficientMatrix,
    t_grid,
    M: int,
    seed: int = 0,
    dt: float = 1e-3,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    fields: Fields | None = None,
    workers: int = 1,
) -> list[EmpiricalKernel]:
    """Sample clouds of X(x0, y, t) at each grid time from M independent paths."""
    if M < 1:
        raise ValueError("M must be >= 1")
    idx, res, _, _ = _simulate_cloud(x0, y, coeffs, t_grid, M, seed, dt, thresholds, fields, workers)
    return [EmpiricalKernel(float(i * dt), res.states[:, i].copy()) for i in idx]


# ----------------------------------------------------- nonlinear convolution

def _integrability_check(norms: np.ndarray):
    finite = norms[np.isfinite(norms)]
    if finite.size != norms.size:
        warnings.warn("non-finite norm among h(tau_x y); integrability fails", TruncationWarning, stacklevel=3)
        return
    if finite.size > 10:
        med = np.median(finite)
        if med > 0 and finite.max() > 1e6 * med:
            warnings.warn("norms of h(tau_x y) vary over six orders of magnitude; integrability is doubtful", TruncationWarning, stacklevel=3)


def _cloud_rows(kernel: EmpiricalKernel, y, scheme, h) -> np.ndarray:
    """Per-sample coefficient rows of h(tau_x y); zero rows at the cemetery."""
    rows = np.zeros((kernel.M, scheme.size))
    a = kernel.alive
    if not a.any():
        return rows
    X = kernel.samples[a]
    if h is None:
        rows[a] = translated_coeffs(y, X, scheme)
    else:
        vals = np.asarray(h(X), dtype=float)
        rows[a] = vals[:, : scheme.size]
    return rows


def nonlinear_convolution(
    kernel: EmpiricalKernel,
    y: TemperedDistribution,
    scheme: TruncationScheme,
    h: Callable[[np.ndarray], np.ndarray] | None = None,
    p: float = 0.0,
    with_error: bool = False,
):
    """(1/M) sum_m coefficients of h(tau_{x_m} y).

    ``h`` maps an (m, d) array of points to (m, size) coefficient rows; the
    default is the translate itself.  With ``with_error`` the per-coefficient
    standard errors are returned too.
    """
    rows = _cloud_rows(kernel, y, scheme, h)
    w = np.sqrt(norm_weights(scheme, p))
    _integrability_check(np.sqrt(((rows * w) ** 2).sum(axis=1))[kernel.alive])
    mean = rows.mean(axis=0)
    out = HermiteCoeffs(scheme, mean)
    if with_error:
        se = rows.std(axis=0, ddof=1) / math.sqrt(kernel.M) if kernel.M > 1 else np.zeros(scheme.size)
        return out, se
    return out


def generator_of_translates(fields: Fields, y: TemperedDistribution, scheme: TruncationScheme) -> Callable:
    """x -> coefficients (degree N+2) of L(tau_x y).

    L(tau_x y) = 1/2 sum a_ij(x) d_ij tau_x y - sum b-bar_i(x) d_i tau_x y with
    a = sigma-bar sigma-bar^t, since <sigma, tau_x y> is the field at x.
    """
    d = scheme.d
    wide1 = scheme.extended(1)
    D1 = [derivative_matrix(scheme, i) for i in range(d)]
    D2 = [[derivative_matrix(wide1, j) @ D1[i] for j in range(d)] for i in range(d)]
    n1, n2 = wide1.size, scheme.extended(2).size

    def h(X):
        X = np.asarray(X, dtype=float).reshape(-1, d)
        c = translated_coeffs(y, X, scheme)
        S = np.asarray(fields.sigma(X)).reshape(-1, d, d)
        B = np.asarray(fields.b(X)).reshape(-1, d)
        A = S @ np.swapaxes(S, -1, -2)
        out = np.zeros((len(X), n2))
        for i in range(d):
            for j in range(d):
                out += 0.5 * A[:, i, j, None] * (c @ D2[i][j].T)
            out[:, :n1] -= B[:, i, None] * (c @ D1[i].T)
        return out

    return h


# ---------------------------------------------------------------------- psi

@dataclass
class EvolutionReport:
    """psi(t) = E Y_t(y) in coefficients, with per-coefficient standard errors.

    ``rows`` keeps the per-path coefficient rows at every grid time so that
    residuals can carry matched error bars.  ``L_rows`` holds the per-path
    rows of L(tau_X y) at degree N+2.
    """

    times: np.ndarray
    scheme: TruncationScheme
    psi: np.ndarray
    stderr: np.ndarray
    mass: np.ndarray
    M: int
    dt: float
    seed: int
    field_max: float
    rows: np.ndarray = field(repr=False, default=None)
    L_rows: np.ndarray = field(repr=False, default=None)
    residuals: dict = field(default_factory=dict)

    def coeffs(self, i: int) -> HermiteCoeffs:
        return HermiteCoeffs(self.scheme, self.psi[i])

    def summary(self) -> dict:
        return {
            "times": [float(t) for t in self.times],
            "N": self.scheme.N,
            "d": self.scheme.d,
            "M": self.M,
            "dt": self.dt,
            "seed": self.seed,
            "field_max": self.field_max,
            "psi": self.psi.tolist(),
            "stderr": self.stderr.tolist(),
            "mass": self.mass.tolist(),
            "residuals": self.residuals,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def estimate_psi(
    y: TemperedDistribution,
    coeffs: CoefficientMatrix,
    t_grid,
    M: int,
    seed: int = 0,
    N: int = 12,
    dt: float = 1e-3,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    bound: float | None = None,
    fields: Fields | None = None,
    workers: int = 1,
    with_generator: bool = True,
    refine: int = 0,
) -> EvolutionReport:
    """psi(t, y) = E Y_t(y) = y o P-bar(0, y, t, .) on the grid.

    Raises HypothesisViolation if any path explodes or, when ``bound`` is
    given, if the fields exceed it along the simulated paths.  ``refine``
    runs Euler on the same noise bridge-refined to dt / 2**refine.
    """
    d = y.d
    scheme = TruncationScheme(d, N)
    idx, res, bm, fields = _simulate_cloud(np.zeros(d), y, coeffs, t_grid, M, seed, dt, thresholds, fields, workers, refine)
    if res.exploded.any():
        raise HypothesisViolation(f"{int(res.exploded.sum())} of {M} paths exploded; the evolution equation needs eta = inf")
    if bound is not None and res.field_max > bound:
        raise HypothesisViolation(f"fields reached {res.field_max:.4g} above the declared bound {bound:.4g}")
    times = idx * dt
    rows = np.stack([translated_coeffs(y, res.states[:, i], scheme) for i in idx], axis=1)  # (M, T, size)
    # psi(0, y) = y exactly: every path starts at 0
    rows[:, 0] = to_coeffs(y, scheme).values if idx[0] == 0 else rows[:, 0]
    psi = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros_like(psi)
    if idx[0] == 0:
        # the mean of M equal rows can round; pin it
        psi[0] = rows[0, 0]
        se[0] = 0.0
    L_rows = None
    if with_generator:
        h = generator_of_translates(fields, y, scheme)
        L_rows = np.stack([h(res.states[:, i]) for i in idx], axis=1)
    mass = psi @ integrals(scheme)
    return EvolutionReport(times, scheme, psi, se, mass, M, dt, seed, res.field_max, rows, L_rows)


def _weighted_norm(v: np.ndarray, scheme: TruncationScheme, p: float) -> np.ndarray:
    w = norm_weights(scheme, p)
    return np.sqrt((v**2 * w[: v.shape[-1]]).sum(axis=-1))


def evolution_residual(report: EvolutionReport, p: float = 0.0, k: float = 3.0) -> dict:
    """Residuals of d/dt psi(t) = L(y) o mu_t, differential and integrated.

    Differential: Richardson-extrapolated central difference of the per-path
    rows minus the per-path rows of L(tau_X y), at interior grid points.
    Integrated: psi(t) - y - trapezoid int_0^t L(y) o mu_s ds.  Both are
    measured in ||.||_{p-1}; each comes with the norm of its per-coefficient
    standard errors (mc) and a finite-difference error estimate (fd).  A
    residual passes when norm <= k * (mc + fd).
    """
    if report.L_rows is None:
        raise ValueError("report was built without generator rows")
    t = report.times
    n = len(t)
    if n < 5:
        raise ValueError("need at least 5 grid times")
    h = np.diff(t)
    if np.ptp(h) > 1e-9 * h.mean():
        raise ValueError("grid must be uniform")
    h = float(h.mean())
    wide = report.scheme.extended(2)
    M = report.M
    size = report.scheme.size
    rows = np.zeros(report.rows.shape[:2] + (wide.size,))
    rows[:, :, :size] = report.rows
    Lr = report.L_rows

    def summarize(per_path, fd_vec):
        mean = per_path.mean(axis=0)
        se = per_path.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros_like(mean)
        norm = _weighted_norm(mean, wide, p - 1)
        mc = _weighted_norm(se, wide, p - 1)
        fd = _weighted_norm(fd_vec, wide, p - 1)
        return norm, mc, fd

    diff_table = []
    for i in range(2, n - 2):
        c1 = (rows[:, i + 1] - rows[:, i - 1]) / (2 * h)
        c2 = (rows[:, i + 2] - rows[:, i - 2]) / (4 * h)
        rich = (4 * c1 - c2) / 3
        r = rich - Lr[:, i]
        norm, mc, fd = summarize(r, (rich - c1).mean(axis=0))
        diff_table.append({"t": float(t[i]), "norm": float(norm), "mc": float(mc), "fd": float(fd), "pass": bool(norm <= k * (mc + fd))})

    # integrated form; the trapezoid error is estimated by Richardson against
    # the step-2h rule at even indices and carried forward to odd ones
    int_table = []
    fine = np.zeros_like(Lr[:, 0])
    coarse = np.zeros_like(fine)
    fd_vec = np.zeros(wide.size)
    for i in range(1, n):
        fine = fine + 0.5 * h * (Lr[:, i - 1] + Lr[:, i])
        if i % 2 == 0:
            coarse = coarse + h * (Lr[:, i - 2] + Lr[:, i])
            fd_vec = (fine - coarse).mean(axis=0) / 3
        r = rows[:, i] - rows[:, 0] - fine
        norm, mc, fd = summarize(r, fd_vec)
        int_table.append({"t": float(t[i]), "norm": float(norm), "mc": float(mc), "fd": float(fd), "pass": bool(norm <= k * (mc + fd))})

    out = {
        "differential": diff_table,
        "integrated": int_table,
        "pass": all(r["pass"] for r in diff_table + int_table),
        "p": p,
        "k": k,
    }
    report.residuals = out
    return out


# ---------------------------------------------------------- adjoint operator

def adjoint_apply(fields: Fields, phi: HermiteCoeffs, Q: int | None = None, tol: float = 1e-8) -> HermiteCoeffs:
    """Coefficients (degree N+2) of 1/2 sum d_ij(a_ij phi) - sum d_i(b-bar_i phi).

    Constant fields act directly on the coefficients.  Otherwise the products
    a_ij phi and b-bar_i phi are sampled at Gauss-Hermite nodes, re-projected
    to degree N and differentiated exactly; the returned ``aliasing`` is the
    largest re-projection tail, and a TruncationWarning is issued above ``tol``.
    """
    scheme = phi.scheme
    d = scheme.d
    wide1, wide2 = scheme.extended(1), scheme.extended(2)
    D1 = [derivative_matrix(scheme, i) for i in range(d)]
    D2 = [derivative_matrix(wide1, j) for j in range(d)]
    out = np.zeros(wide2.size)
    aliasing = 0.0
    if fields.label == "constant":
        S = np.asarray(fields.sigma(np.zeros((1, d)))).reshape(d, d)
        B = np.asarray(fields.b(np.zeros((1, d)))).reshape(d)
        A = S @ S.T
        for i in range(d):
            first = D1[i] @ phi.values
            for j in range(d):
                if A[i, j]:
                    out += 0.5 * A[i, j] * (D2[j] @ first)
            if B[i]:
                out[: wide1.size] -= B[i] * first
        return HermiteCoeffs(wide2, out)

    quad = QuadratureRule.gauss_hermite(Q or (2 * scheme.N + 40))

    def proj(func):
        c = hermite_transform(func, scheme, quad)
        return c

    def sigma_at(x):
        return np.asarray(fields.sigma(x.reshape(-1, d))).reshape(x.shape[:-1] + (d, d))

    def b_at(x):
        return np.asarray(fields.b(x.reshape(-1, d))).reshape(x.shape[:-1] + (d,))

    for i in range(d):
        for j in range(d):
            def aphi(x, i=i, j=j):
                S = sigma_at(x)
                a = (S[..., i, :] * S[..., j, :]).sum(axis=-1)
                return a * phi.evaluate(x)

            c = proj(aphi)
            aliasing = max(aliasing, c.aliasing)
            out += 0.5 * (D2[j] @ (D1[i] @ c.values))

        def bphi(x, i=i):
            return b_at(x)[..., i] * phi.evaluate(x)

        c = proj(bphi)
        aliasing = max(aliasing, c.aliasing)
        out[: wide1.size] -= D1[i] @ c.values
    if aliasing > tol:
        warnings.warn(f"re-projection tail {aliasing:.2e} exceeds {tol:.0e}", TruncationWarning, stacklevel=2)
    return HermiteCoeffs(wide2, out, aliasing)


# ----------------------------------------------------------- forward equation

def forward_panel(d: int = 1) -> list[tuple[str, Callable, Callable, Callable]]:
    """Test functions (name, f, grad f, hess f): h_0..h_4 along axis 1, x_1, x_1^2."""
    panel = []
    scheme = TruncationScheme(d, 4)
    wide1, wide2 = scheme.extended(1), scheme.extended(2)
    for n in range(5):
        k = [0] * d
        k[0] = n
        e = basis_vector(scheme, k)
        grads = [HermiteCoeffs(wide1, derivative_matrix(scheme, i) @ e.values) for i in range(d)]
        hess = [[HermiteCoeffs(wide2, derivative_matrix(wide1, j) @ g.values) for j in range(d)] for g in grads]

        def f(x, e=e):
            return e.evaluate(x)

        def gf(x, grads=grads):
            return np.stack([g.evaluate(x) for g in grads], axis=-1)

        def hf(x, hess=hess):
            return np.stack([np.stack([c.evaluate(x) for c in row], axis=-1) for row in hess], axis=-2)

        panel.append((f"h_{n}", f, gf, hf))

    def unit(x):
        g = np.zeros(x.shape)
        g[..., 0] = 1.0
        return g

    def zero_h(x):
        return np.zeros(x.shape + (x.shape[-1],))

    def sq_h(x):
        h = np.zeros(x.shape + (x.shape[-1],))
        h[..., 0, 0] = 2.0
        return h

    panel.append(("x", lambda x: x[..., 0], unit, zero_h))
    panel.append(("x^2", lambda x: x[..., 0] ** 2, lambda x: 2 * x[..., 0, None] * unit(x), sq_h))
    return panel


def _generator_values(fields: Fields, X: np.ndarray, grad, hess) -> np.ndarray:
    S = np.asarray(fields.sigma(X)).reshape(X.shape[:-1] + (X.shape[-1],) * 2)
    B = np.asarray(fields.b(X)).reshape(X.shape)
    A = S @ np.swapaxes(S, -1, -2)
    return 0.5 * np.einsum("...ij,...ij->...", A, hess(X)) + np.einsum("...i,...i->...", B, grad(X))


def _forward_per_path(fields, states, x0, panel, scheme, dt, idx):
    """Per-path residuals f(X_t) - f(x0) - sum_{s<t} (L-bar f)(X_s) dt at grid indices."""
    m, n_rec, d = states.shape
    out_panel = np.zeros((m, len(idx), len(panel)))
    out_basis = np.zeros((m, len(idx), scheme.size))
    flat = states.reshape(-1, d)
    for a, (_, f, gf, hf) in enumerate(panel):
        Lf = _generator_values(fields, flat, gf, hf).reshape(m, n_rec)
        cum = np.concatenate([np.zeros((m, 1)), np.cumsum(Lf[:, :-1], axis=1) * dt], axis=1)
        fv = f(states[:, idx])
        out_panel[:, :, a] = fv - f(x0[None, :]) - cum[:, idx]
    # basis part: f = h_k for all |k| <= N
    wide1, wide2 = scheme.extended(1), scheme.extended(2)
    D1 = [derivative_matrix(scheme, i) for i in range(d)]
    D2 = [[derivative_matrix(wide1, j) @ D1[i] for j in range(d)] for i in range(d)]
    S = np.asarray(fields.sigma(flat)).reshape(-1, d, d)
    B = np.asarray(fields.b(flat)).reshape(-1, d)
    A = S @ np.swapaxes(S, -1, -2)
    c2 = translated_coeffs_dirac(flat, wide2)  # h_k(X) for |k| <= N+2
    c1 = c2[:, : wide1.size]
    Lb = np.zeros((len(flat), scheme.size))
    for i in range(d):
        Lb += B[:, i, None] * (c1 @ D1[i])
        for j in range(d):
            Lb += 0.5 * A[:, i, j, None] * (c2 @ D2[i][j])
    Lb = Lb.reshape(m, n_rec, -1)
    cum = np.concatenate([np.zeros((m, 1, scheme.size)), np.cumsum(Lb[:, :-1], axis=1) * dt], axis=1)
    h_now = c2[:, : scheme.size].reshape(m, n_rec, -1)[:, idx]
    h_0 = dirac_coeffs(x0, scheme).values
    out_basis[:] = h_now - h_0 - cum[:, idx]
    return out_panel, out_basis


def translated_coeffs_dirac(X: np.ndarray, scheme: TruncationScheme) -> np.ndarray:
    """Rows h_k(X_m): the coefficients of delta_{X_m}."""
    from .hermite import hermite_functions

    idx = scheme.indices
    vals = None
    for a in range(scheme.d):
        tab = hermite_functions(scheme.N, X[:, a])
        part = tab[idx[:, a]].T
        vals = part if vals is None else vals * part
    return vals


def forward_residual(
    x0,
    y: TemperedDistribution,
    coeffs: CoefficientMatrix,
    t_grid,
    M: int,
    q: float,
    seed: int = 0,
    dt: float = 1e-3,
    N: int = 16,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    bound: float | None = None,
    fields: Fields | None = None,
    k: float = 3.0,
    workers: int = 1,
) -> dict:
    """Residual of P-bar_t = delta_x0 + int_0^t L-bar* P-bar_s ds.

    P-bar_t is the average of delta_{X_m(t)}.  Paired with a test f the
    residual is E f(X_t) - f(x0) - int_0^t E (L-bar f)(X_s) ds, the time
    integral taken as the left-point sum on the simulation grid.  Reported
    for the panel h_0..h_4, x, x^2 and as the ||.||_{-q-1} norm of the vector
    of pairings with h_k, |k| <= N.  Error budget = MC standard error + the
    change under dt -> dt/2 on bridge-refined noise.
    """
    d = y.d
    if q <= d / 4:
        raise ValueError(f"q must exceed d/4 (got q={q}, d={d})")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,)).copy()
    fields = fields or coefficient_fields(coeffs, y)
    idx = _grid_indices(t_grid, dt)
    T = float(idx[-1] * dt)
    scheme = TruncationScheme(d, N)
    panel = forward_panel(d)
    if T == 0:
        zeros = [{"name": nm, "value": 0.0, "mc": 0.0, "dt_err": 0.0, "pass": True} for nm, *_ in panel]
        return {"times": [0.0], "panel": [zeros], "norm": [0.0], "norm_mc": [0.0], "norm_dt": [0.0], "pass": True, "q": q, "first_moment": []}
    bm = sample_brownian(T, dt, d, seed, M, 0, (rng.BROWNIAN,), workers)
    runs = []
    for b in (bm, refine_brownian(bm, 1)):
        res = simulate_path(fields, x0, b, thresholds, workers)
        if res.exploded.any():
            raise HypothesisViolation("paths exploded; the forward equation needs eta = inf")
        if bound is not None and res.field_max > bound:
            raise HypothesisViolation(f"fields reached {res.field_max:.4g} above the declared bound {bound:.4g}")
        stride = 1 if b is bm else 2
        runs.append(_forward_per_path(fields, res.states, x0, panel, scheme, b.dt, idx * stride))
        if b is bm:
            res0 = res
    (pp, pb), (pp2, pb2) = runs
    wq = norm_weights(scheme, -q - 1)
    times = idx * dt
    panel_rows, norms, norm_mc, norm_dt = [], [], [], []
    all_pass = True
    for ti in range(len(idx)):
        row = []
        for a, (nm, *_) in enumerate(panel):
            v = float(pp[:, ti, a].mean())
            mc = float(pp[:, ti, a].std(ddof=1) / math.sqrt(M))
            de = abs(v - float(pp2[:, ti, a].mean()))
            ok = abs(v) <= k * (mc + de) or (mc + de == 0 and v == 0)
            all_pass &= ok
            row.append({"name": nm, "value": v, "mc": mc, "dt_err": de, "pass": bool(ok)})
        panel_rows.append(row)
        vb = pb[:, ti].mean(axis=0)
        se = pb[:, ti].std(axis=0, ddof=1) / math.sqrt(M)
        de = np.abs(vb - pb2[:, ti].mean(axis=0))
        n_r = float(np.sqrt((wq * vb**2).sum()))
        n_mc = float(np.sqrt((wq * se**2).sum()))
        n_dt = float(np.sqrt((wq * de**2).sum()))
        all_pass &= n_r <= k * (n_mc + n_dt) or n_r == 0
        norms.append(n_r)
        norm_mc.append(n_mc)
        norm_dt.append(n_dt)
    # first moment: E X_t - x0 - int E b-bar(X_s) ds is a pure martingale mean under Euler
    moments = []
    res = res0
    Bv = np.asarray(fields.b(res.states.reshape(-1, d))).reshape(res.states.shape)
    cum = np.concatenate([np.zeros((M, 1, d)), np.cumsum(Bv[:, :-1], axis=1) * dt], axis=1)
    for ti, i in enumerate(idx):
        r = res.states[:, i] - x0 - cum[:, i]
        v = r.mean(axis=0)
        mc = r.std(axis=0, ddof=1) / math.sqrt(M)
        ok = bool(np.all(np.abs(v) <= k * mc + 1e-14))
        all_pass &= ok
        moments.append({"t": float(times[ti]), "value": v.tolist(), "mc": mc.tolist(), "pass": ok})
    return {
        "times": times.tolist(),
        "panel": panel_rows,
        "norm": norms,
        "norm_mc": norm_mc,
        "norm_dt": norm_dt,
        "first_moment": moments,
        "q": q,
        "k": k,
        "M": M,
        "dt": dt,
        "pass": bool(all_pass),
    }


# ---------------------------------------------------------------- semigroup

@dataclass(frozen=True)
class PairingObservable:
    """f(Y) = <phi, Y> on alive states, 0 at the cemetery."""

    phi: TemperedDistribution
    name: str = "pairing"

    def values(self, y: TemperedDistribution, z: np.ndarray, alive: np.ndarray) -> np.ndarray:
        out = np.zeros(alive.shape)
        if alive.any():
            out[alive] = pair_translated(self.phi, y, z[alive])
        return out

    def __call__(self, state) -> float:
        if state is CEMETERY:
            return 0.0
        return float(pair_translated(self.phi, state, np.zeros((1, state.d)))[0])


@dataclass(frozen=True)
class AliveIndicator:
    """f = 1 on alive states, 0 at the cemetery."""

    name: str = "one"

    def values(self, y, z, alive) -> np.ndarray:
        return alive.astype(float)

    def __call__(self, state) -> float:
        return 0.0 if state is CEMETERY else 1.0


def semigroup_estimate(
    f,
    y: TemperedDistribution,
    coeffs: CoefficientMatrix,
    s: float,
    t: float,
    M: int,
    seed: int = 0,
    dt: float = 1e-3,
    M_inner: int = 64,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    workers: int = 1,
) -> dict:
    """Single-stage E f(Y_{s+t}(y)) against two-stage E g(Y_t(y)), g(y') = E f(Y_s(y')).

    The inner estimate restarts the flow at y' = tau_{z_t} y with fresh noise
    from the INNER stream keyed by the outer path id, and rebuilds the
    coefficient fields from y'.  ``one`` reports T_{s+t} 1 as an exact
    fraction of alive paths.
    """
    obs = list(f) if isinstance(f, (list, tuple)) else [f]
    n_s = int(round(s / dt))
    n_t = int(round(t / dt))
    if abs(n_s * dt - s) > 1e-9 or abs(n_t * dt - t) > 1e-9:
        raise ValueError("s and t must be multiples of dt")
    total = n_s + n_t
    d = y.d
    single_vals = np.zeros((M, len(obs)))
    alive_single = np.ones(M, dtype=bool)
    if total:
        bm = sample_brownian(total * dt, dt, d, seed, M, 0, (rng.BROWNIAN,), workers)
        fl = evolve_flow(y, coeffs, bm, thresholds, workers=workers)
        zf, af = fl.z.states[:, -1], fl.z.alive[:, -1]
        alive_single = af
        for a, ob in enumerate(obs):
            single_vals[:, a] = ob.values(y, zf, af)
    else:
        for a, ob in enumerate(obs):
            single_vals[:, a] = ob.values(y, np.zeros((M, d)), np.ones(M, dtype=bool))

    # outer stage to time t, on a disjoint stream
    if n_t:
        bo = sample_brownian(n_t * dt, dt, d, seed, M, 0, (rng.SAMPLING,), workers)
        outer = evolve_flow(y, coeffs, bo, thresholds, workers=workers)
        z_out, a_out = outer.z.states[:, -1], outer.z.alive[:, -1]
    else:
        z_out, a_out = np.zeros((M, d)), np.ones(M, dtype=bool)
    g = np.zeros((M, len(obs)))
    for m in range(M):
        if not a_out[m]:
            continue
        y2 = translate(y, z_out[m])
        if n_s:
            bi = sample_brownian(n_s * dt, dt, d, seed, M_inner, 0, (rng.INNER, m), 1)
            inner = evolve_flow(y2, coeffs, bi, thresholds)
            zi, ai = inner.z.states[:, -1], inner.z.alive[:, -1]
        else:
            zi, ai = np.zeros((1, d)), np.ones(1, dtype=bool)
        for a, ob in enumerate(obs):
            g[m, a] = ob.values(y2, zi, ai).mean()

    rows = []
    for a, ob in enumerate(obs):
        m1, s1 = single_vals[:, a].mean(), single_vals[:, a].std(ddof=1) / math.sqrt(M)
        m2, s2 = g[:, a].mean(), g[:, a].std(ddof=1) / math.sqrt(M)
        sd = math.hypot(s1, s2)
        diff = m1 - m2
        rows.append(
            {
                "name": getattr(ob, "name", f"obs_{a}"),
                "single": float(m1),
                "single_se": float(s1),
                "two_stage": float(m2),
                "two_stage_se": float(s2),
                "diff": float(diff),
                "z": float(diff / sd) if sd > 0 else 0.0,
                "pass": bool(abs(diff) <= 3 * sd) if sd > 0 else bool(diff == 0),
            }
        )
    one = Fraction(int(alive_single.sum()), M)
    return {"s": s, "t": t, "M": M, "M_inner": M_inner, "rows": rows, "T_one": one, "T_one_str": str(one)}


# ---------------------------------------------------------------- generator

def generator_special_case(
    y: TemperedDistribution,
    coeffs: CoefficientMatrix,
    phi: HermiteCoeffs,
    t_small_grid,
    M: int = 10000,
    seed: int = 0,
    dt: float = 1e-3,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    workers: int = 1,
) -> dict:
    """lim_{t->0} (E<phi, Y_t> - <phi, y>)/t against <phi, L(y)>.

    Monte Carlo side: per path Q(t) = (g(z_t) - g(0) - grad g(0) . sigma-bar(0) B_t)/t
    with g(z) = <phi, tau_z y>; the subtracted term is a mean-zero control
    variate.  The t -> 0 limit is the intercept of a least-squares line
    through the grid means, formed per path so the standard error is exact.
    Analytic side: the coefficients of L(y) from apply_L, paired with phi.
    """
    d = y.d
    idx = _grid_indices(t_small_grid, dt)
    if idx[0] == 0:
        raise ValueError("t_small_grid must exclude 0")
    T = float(idx[-1] * dt)
    fields = coefficient_fields(coeffs, y)
    bm = sample_brownian(T, dt, d, seed, M, 0, (rng.PROBE,), workers)
    z = simulate_path(fields, np.zeros(d), bm, thresholds, workers)
    scheme = phi.scheme
    wide1 = scheme.extended(1)
    c0 = to_coeffs(y, wide1)
    g0 = float(c0.resized(scheme.N).values @ phi.values)
    grad0 = np.array([c0.values @ (derivative_matrix(scheme, i) @ phi.values) for i in range(d)])
    S0 = np.asarray(fields.sigma(np.zeros((1, d)))).reshape(d, d)
    Bt = bm.values()[:, idx]  # (M, n, d)
    ts = idx * dt
    Q = np.zeros((M, len(idx)))
    for a, i in enumerate(idx):
        alive = z.alive[:, i]
        gz = np.zeros(M)
        if alive.any():
            gz[alive] = translated_coeffs(y, z.states[alive, i], scheme) @ phi.values
        cv = Bt[:, a] @ (S0.T @ grad0)
        Q[:, a] = (gz - g0 - cv) / ts[a]
    if len(ts) > 1:
        V = np.vstack([np.ones_like(ts), ts]).T
        w = np.linalg.pinv(V)[0]
    else:
        w = np.ones(1)
    Z = Q @ w
    est = float(Z.mean())
    se = float(Z.std(ddof=1) / math.sqrt(M))
    Ly = apply_L(coeffs, to_coeffs(y, scheme))
    analytic = float(Ly.coeffs.values[: scheme.size] @ phi.values)
    return {
        "estimate": est,
        "stderr": se,
        "analytic": analytic,
        "diff": est - analytic,
        "grid_means": Q.mean(axis=0).tolist(),
        "times": ts.tolist(),
        "pass": bool(abs(est - analytic) <= 3 * se + 1e-12),
    }
