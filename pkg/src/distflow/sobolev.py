"""Hermite-Sobolev norms, the S_p / S_-p pairing, and Dirac coefficients."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .hermite import (
    HermiteCoeffs,
    TruncationScheme,
    derivative_matrix,
    hermite_functions,
)

__all__ = [
    "TruncationWarning",
    "SobolevElement",
    "norm_weights",
    "sobolev_norm",
    "sobolev_inner",
    "duality_pair",
    "dirac_coeffs",
    "dirac_shell_terms",
    "dirac_partial_sums",
    "dirac_tail_bound",
    "dirac_cauchy_degree",
    "classify_dirac_growth",
    "derivative_boundedness_probe",
]


class TruncationWarning(UserWarning):
    """A truncated computation is not trustworthy at the stated accuracy."""


def norm_weights(scheme: TruncationScheme, p: float) -> np.ndarray:
    """(2|k| + d)^{2p} for every k in the scheme."""
    return (2.0 * scheme.degrees + scheme.d) ** (2.0 * p)


def sobolev_norm(c: HermiteCoeffs, p: float) -> float:
    return math.sqrt(float(np.sum(norm_weights(c.scheme, p) * c.values**2)))


def sobolev_inner(a: HermiteCoeffs, b: HermiteCoeffs, p: float) -> float:
    N = max(a.N, b.N)
    a, b = a.resized(N), b.resized(N)
    return float(np.sum(norm_weights(a.scheme, p) * a.values * b.values))


@dataclass(frozen=True)
class SobolevElement:
    """A truncated element of S_p: coefficients plus the regularity index p."""

    coeffs: HermiteCoeffs
    p: float

    @property
    def scheme(self) -> TruncationScheme:
        return self.coeffs.scheme

    def norm(self, p: float | None = None) -> float:
        return sobolev_norm(self.coeffs, self.p if p is None else p)


def duality_pair(psi, phi, p: float = 0.0) -> float:
    """<psi, phi> as the finite coefficient dot product.

    ``psi`` and ``phi`` may be HermiteCoeffs or SobolevElement.  When either
    carries an aliasing estimate, the tail contribution ||psi||_{-p} * tail(phi)
    + tail(psi) * ||phi||_p is compared against the value and a
    TruncationWarning is issued if it dominates.
    """
    if isinstance(psi, SobolevElement):
        p = -psi.p
        psi = psi.coeffs
    if isinstance(phi, SobolevElement):
        p = phi.p
        phi = phi.coeffs
    if psi.d != phi.d:
        raise ValueError("dimension mismatch")
    N = max(psi.N, phi.N)
    a, b = psi.resized(N), phi.resized(N)
    value = float(np.dot(a.values, b.values))
    tail = sobolev_norm(a, -p) * phi.aliasing + psi.aliasing * sobolev_norm(b, p)
    if tail > 0 and tail > abs(value):
        warnings.warn(
            f"pairing {value:.3e} is dominated by the truncation tail estimate {tail:.3e}",
            TruncationWarning,
            stacklevel=2,
        )
    return value


def dirac_coeffs(x, scheme: TruncationScheme) -> HermiteCoeffs:
    """Coefficients of delta_x: c_k = h_k(x)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (scheme.d,):
        raise ValueError(f"point must have shape ({scheme.d},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("point must be finite")
    tables = [hermite_functions(scheme.N, xi) for xi in x]
    idx = scheme.indices
    vals = tables[0][idx[:, 0]]
    for a in range(1, scheme.d):
        vals = vals * tables[a][idx[:, a]]
    return HermiteCoeffs(scheme, vals)


def _h0_squared(n_max: int) -> np.ndarray:
    # h_n(0)^2: zero for odd n, and h_{2m}(0)^2 = h_{2m-2}(0)^2 * (2m-1)/(2m)
    out = np.zeros(n_max + 1)
    out[0] = 1.0 / math.sqrt(math.pi)
    m = np.arange(1, n_max // 2 + 1)
    out[2 * m] = out[0] * np.cumprod((2 * m - 1) / (2 * m))
    return out


def dirac_shell_terms(q: float, d: int, n_max: int) -> np.ndarray:
    """Shell sums s_n = sum_{|k|=n} (2n+d)^{-2q} h_k(0)^2 for n = 0..n_max."""
    a = _h0_squared(n_max)
    shell = a.copy()
    for _ in range(d - 1):
        shell = np.convolve(shell, a)[: n_max + 1]
    n = np.arange(n_max + 1)
    return (2.0 * n + d) ** (-2.0 * q) * shell


def dirac_partial_sums(q: float, d: int, n_max: int) -> np.ndarray:
    """||delta_0||^2_{-q} truncated at degree n, for n = 0..n_max."""
    return np.cumsum(dirac_shell_terms(q, d, n_max))


def dirac_tail_bound(q: float, N: int) -> float:
    """Upper bound on sum_{n > N} of the d=1 shell terms of ||delta_0||^2_{-q}.

    Uses h_{2m}(0)^2 = Gamma(m+1/2) / (pi Gamma(m+1)) <= 1/(pi sqrt(m)) and
    (4m+1)^{-2q} <= (4m)^{-2q}, then bounds the sum over m > N/2 by an
    integral.  Infinite when q <= 1/4.
    """
    if q <= 0.25:
        return math.inf
    M = max(N // 2, 1)
    e = 2.0 * q - 0.5
    return 4.0 ** (-2.0 * q) * M ** (-e) / (math.pi * e)


def dirac_cauchy_degree(q: float, tol: float = 1e-3) -> float:
    """Smallest (even) degree N at which ``dirac_tail_bound(q, N) < tol`` (d=1)."""
    if q <= 0.25:
        return math.inf
    e = 2.0 * q - 0.5
    M = (4.0 ** (-2.0 * q) / (math.pi * e * tol)) ** (1.0 / e)
    return 2.0 * math.ceil(M * (1 + 1e-12))


def classify_dirac_growth(
    q: float, d: int = 1, n_lo: int = 1000, n_hi: int = 100000, margin: float = 0.05
) -> dict:
    """Log-log slope of the shell terms of ||delta_0||^2_{-q} over [n_lo, n_hi].

    Shell terms decay like n^beta; the series converges when beta < -1.
    Returns the slope and the verdict "cauchy", "divergent" or "inconclusive"
    (when |beta + 1| <= margin).
    """
    terms = dirac_shell_terms(q, d, n_hi + 1)
    # pair consecutive degrees so the odd-degree zeros (d=1) do not enter the fit
    n = np.arange(n_lo - n_lo % 2, n_hi, 2)
    pair = terms[n] + terms[n + 1]
    keep = np.unique(np.geomspace(1, len(n), 200).astype(int)) - 1
    slope = float(np.polyfit(np.log(n[keep]), np.log(pair[keep]), 1)[0])
    if slope < -1.0 - margin:
        verdict = "cauchy"
    elif slope > -1.0 + margin:
        verdict = "divergent"
    else:
        verdict = "inconclusive"
    return {"q": q, "d": d, "slope": slope, "verdict": verdict, "n_range": (n_lo, n_hi)}


def derivative_boundedness_probe(
    p: float, samples: int, scheme: TruncationScheme, axis: int = 0, seed: int = 0
) -> dict:
    """Estimate sup ||d_i phi||_{p-1/2} / ||phi||_p over truncated phi.

    Three numbers: the max over random phi, the max over basis vectors, and the
    exact operator norm of the truncated map (largest singular value of the
    weighted derivative matrix).  The random max never exceeds the last one.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    D = derivative_matrix(scheme, axis)
    w_in = np.sqrt(norm_weights(scheme, p))
    w_out = np.sqrt(norm_weights(scheme.extended(1), p - 0.5))
    W = (w_out[:, None] * D) / w_in[None, :]

    basis_ratios = np.linalg.norm(W, axis=0)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((samples, scheme.size))
    # random phi in weighted coordinates: phi_k = z_k / w_in_k, so ||phi||_p = |z|
    ratios = np.linalg.norm(z @ W.T, axis=1) / np.linalg.norm(z, axis=1)
    best = int(np.argmax(ratios))
    phi_best = z[best] / w_in
    return {
        "p": p,
        "max_ratio": float(ratios[best]),
        "argmax_degree": int(scheme.degrees[np.argmax(np.abs(phi_best) * w_in)]),
        "basis_max_ratio": float(basis_ratios.max()),
        "basis_argmax_degree": int(scheme.degrees[int(np.argmax(basis_ratios))]),
        "operator_norm": float(np.linalg.norm(W, 2)),
    }
