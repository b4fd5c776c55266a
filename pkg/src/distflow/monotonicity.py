"""The monotonicity inequality for constant-coefficient operators.

For reals sigma (d x d) and b (d), with A_oj phi = -sum_i sigma_ij d_i phi and
L_o phi = 1/2 sum (sigma sigma^t)_ij d_ij phi - sum b_i d_i phi, the quantity

    LHS(phi) = 2 <phi, L_o phi>_{p-1} + sum_j ||A_oj phi||^2_{p-1}

is bounded by C(alpha, p, d) ||phi||^2_{p-1}.  Everything here is exact
coefficient arithmetic: phi of degree N lands in degree N+2 under L_o, so the
weighted sums are finite and no quadrature enters.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .hermite import HermiteCoeffs, TruncationScheme, derivative_matrix
from .sobolev import SobolevElement, norm_weights, sobolev_norm

__all__ = [
    "ConstantOperatorPair",
    "monotonicity_lhs",
    "quadratic_form",
    "sup_ratio",
    "estimate_constant",
    "MonotonicityReport",
]


@dataclass(frozen=True, eq=False)
class ConstantOperatorPair:
    sigma: np.ndarray
    b: np.ndarray
    p: float = 0.0
    alpha: float | None = None

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        bb = np.atleast_1d(np.asarray(self.b, dtype=float))
        if s.shape != (len(bb), len(bb)):
            raise ValueError("sigma must be d x d and b of length d")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "b", bb)
        if self.alpha is not None and max(np.abs(s).max(), np.abs(bb).max()) > self.alpha:
            raise ValueError("coefficients exceed the declared alpha")

    @property
    def d(self) -> int:
        return len(self.b)


def _operators(ops: ConstantOperatorPair, scheme: TruncationScheme):
    """Matrices of L_o (size_{N+2} x size_N) and A_oj (size_{N+1} x size_N)."""
    d = scheme.d
    wide1 = scheme.extended(1)
    D1 = [derivative_matrix(scheme, i) for i in range(d)]
    a = ops.sigma @ ops.sigma.T
    L = np.zeros((scheme.extended(2).size, scheme.size))
    for i in range(d):
        for j in range(d):
            if a[i, j]:
                L += 0.5 * a[i, j] * (derivative_matrix(wide1, j) @ D1[i])
        if ops.b[i]:
            L[: wide1.size] -= ops.b[i] * D1[i]
    A = []
    for j in range(d):
        Aj = np.zeros((wide1.size, scheme.size))
        for i in range(d):
            if ops.sigma[i, j]:
                Aj -= ops.sigma[i, j] * D1[i]
        A.append(Aj)
    return L, A


def quadratic_form(ops: ConstantOperatorPair, scheme: TruncationScheme) -> np.ndarray:
    """Symmetric M with LHS(phi) = phi^t M phi for phi of degree <= scheme.N."""
    L, A = _operators(ops, scheme)
    w2 = norm_weights(scheme.extended(2), ops.p - 1)
    w1 = w2[: scheme.extended(1).size]
    w0 = w2[: scheme.size]
    M = 2.0 * (w0[:, None] * L[: scheme.size])
    for Aj in A:
        M += Aj.T @ (w1[:, None] * Aj)
    return 0.5 * (M + M.T)


def monotonicity_lhs(ops: ConstantOperatorPair, phi) -> float:
    """2<phi, L_o phi>_{p-1} + sum_j ||A_oj phi||^2_{p-1}, computed term by term."""
    c = phi.coeffs if isinstance(phi, SobolevElement) else phi
    if c.d != ops.d:
        raise ValueError("dimension mismatch")
    L, A = _operators(ops, c.scheme)
    wide2 = c.scheme.extended(2)
    Lphi = HermiteCoeffs(wide2, L @ c.values)
    total = 2.0 * float(np.sum(norm_weights(wide2, ops.p - 1) * c.resized(wide2.N).values * Lphi.values))
    for Aj in A:
        total += sobolev_norm(HermiteCoeffs(c.scheme.extended(1), Aj @ c.values), ops.p - 1) ** 2
    return total


def sup_ratio(ops: ConstantOperatorPair, scheme: TruncationScheme) -> tuple[float, np.ndarray]:
    """max_phi LHS / ||phi||^2_{p-1} over degree <= N, and a maximiser."""
    g = np.sqrt(norm_weights(scheme, ops.p - 1))
    K = quadratic_form(ops, scheme) / np.outer(g, g)
    vals, vecs = np.linalg.eigh(K)
    return float(vals[-1]), vecs[:, -1] / g


@dataclass
class MonotonicityReport:
    alpha: float
    p: float
    d: int
    N: int
    C_hat: float
    argmax_phi_degree: int
    saturation_curve: list = field(default_factory=list)
    random_phi_max: float = 0.0
    samples: int = 0
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def _operator_samples(alpha: float, d: int, samples: int, seed: int, p: float):
    g = rng.generator(seed, rng.SAMPLING)
    out = []
    for signs in itertools.product((-1.0, 1.0), repeat=d * d + d):
        s = alpha * np.array(signs)
        out.append(ConstantOperatorPair(s[: d * d].reshape(d, d), s[d * d :], p, alpha))
    for _ in range(samples):
        s = g.uniform(-alpha, alpha, d * d + d)
        out.append(ConstantOperatorPair(s[: d * d].reshape(d, d), s[d * d :], p, alpha))
    return out


def estimate_constant(
    alpha: float,
    p: float,
    d: int,
    samples: int,
    scheme: TruncationScheme,
    seed: int = 0,
    phis_per_operator: int = 4,
    saturation_N: tuple = (),
) -> MonotonicityReport:
    """Empirical C(alpha, p, d) over the alpha-box.

    For each sampled (sigma, b) (uniform draws plus every sign corner) the
    supremum over phi of degree <= N is computed exactly as the top eigenvalue
    of the weighted quadratic form; random phi are also drawn as a plain Monte
    Carlo check.  C_hat is the max of the exact suprema (floored at 0, since
    phi -> 0 gives 0).  ``saturation_curve`` lists (N', C_hat(N')) for the
    degrees in ``saturation_N`` (default N/4, N/2, N, 2N) on the same operators.
    """
    if samples < 100:
        raise ValueError("samples must be >= 100")
    if scheme.d != d:
        raise ValueError("scheme dimension differs from d")
    ops_list = _operator_samples(alpha, d, samples, seed, p)
    g = rng.generator(seed, rng.PROBE)
    w = np.sqrt(norm_weights(scheme, p - 1))

    best, best_vec = 0.0, None
    rand_best = 0.0
    for ops in ops_list:
        val, vec = sup_ratio(ops, scheme)
        if val > best:
            best, best_vec = val, vec
        M = quadratic_form(ops, scheme)
        z = g.standard_normal((phis_per_operator, scheme.size))
        phi = z / w
        r = np.einsum("ki,ij,kj->k", phi, M, phi) / np.sum(z * z, axis=1)
        rand_best = max(rand_best, float(r.max()))
    if best_vec is None:
        deg = 0
    else:
        deg = int(scheme.degrees[int(np.argmax(np.abs(best_vec) * w))])

    Ns = saturation_N or tuple(sorted({max(scheme.N // 4, 1), max(scheme.N // 2, 1), scheme.N, 2 * scheme.N}))
    curve = []
    for n in Ns:
        sch = TruncationScheme(d, n)
        c = max([0.0] + [sup_ratio(ops, sch)[0] for ops in ops_list])
        curve.append([int(n), c])
    return MonotonicityReport(
        alpha=float(alpha),
        p=float(p),
        d=int(d),
        N=int(scheme.N),
        C_hat=max(best, 0.0),
        argmax_phi_degree=deg,
        saturation_curve=curve,
        random_phi_max=rand_best,
        samples=len(ops_list),
        seed=int(seed),
    )
