"""Multi-dimensional Hermite functions and exact coefficient-space calculus.

Coefficients are stored against the L^2-orthonormal Hermite functions

    h_n(x) = (2^n n! sqrt(pi))^{-1/2} H_n(x) exp(-x^2/2),

tensorised over d axes, truncated by total degree |k| <= N.  Multi-indices
are enumerated in graded lexicographic order: ascending total degree, and
within one degree ascending lexicographic order of (k_1, ..., k_d).  Because
the order is degree-major, the basis for N is a prefix of the basis for any
N' > N, which makes padding and truncation plain slicing.  This order is
frozen: the JSON and CSV formats depend on it.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_hermite

PI_M14 = math.pi ** -0.25
_RESCALE = 1e150

__all__ = [
    "TruncationScheme",
    "QuadratureRule",
    "HermiteCoeffs",
    "multi_indices",
    "hermite_functions",
    "hermite_eval",
    "hermite_transform",
    "derivative_coeffs",
    "multiply_by_coordinate",
    "derivative_matrix",
    "coordinate_matrix",
    "basis_vector",
    "integrals",
]


@lru_cache(maxsize=None)
def multi_indices(d: int, N: int) -> np.ndarray:
    """All k in Z^d_+ with |k| <= N, graded lexicographic order, shape (n, d)."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if N < 0:
        raise ValueError("max total degree must be >= 0")
    rows = []
    for deg in range(N + 1):
        shell = [k for k in itertools.product(range(deg + 1), repeat=d) if sum(k) == deg]
        rows.extend(sorted(shell))
    out = np.array(rows, dtype=np.int64).reshape(-1, d)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def _lookup(d: int, N: int) -> np.ndarray:
    # dense (N+1)^d table: multi-index -> position, -1 outside the simplex
    table = np.full((N + 1,) * d, -1, dtype=np.int64)
    idx = multi_indices(d, N)
    table[tuple(idx.T)] = np.arange(len(idx))
    table.flags.writeable = False
    return table


@dataclass(frozen=True)
class TruncationScheme:
    """Keep every tensor Hermite function h_k with total degree |k| <= N."""

    d: int
    N: int

    def __post_init__(self):
        if self.d < 1 or self.d > 3:
            raise ValueError(f"dimension {self.d} not supported (1 <= d <= 3)")
        if self.N < 0:
            raise ValueError("max total degree must be >= 0")

    @property
    def indices(self) -> np.ndarray:
        return multi_indices(self.d, self.N)

    @property
    def degrees(self) -> np.ndarray:
        return self.indices.sum(axis=1)

    @property
    def size(self) -> int:
        return math.comb(self.N + self.d, self.d)

    def index_of(self, k) -> int:
        k = tuple(int(v) for v in np.atleast_1d(k))
        if len(k) != self.d or min(k) < 0 or sum(k) > self.N:
            raise KeyError(f"multi-index {k} outside truncation (d={self.d}, N={self.N})")
        return int(_lookup(self.d, self.N)[k])

    def extended(self, extra: int) -> "TruncationScheme":
        return TruncationScheme(self.d, self.N + extra)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule with the weight folded in, for Hermite *functions*.

    ``sum_i weights[i] * f(nodes[i])`` approximates the plain integral of f over
    R; it is exact when f = h_j * h_k with j + k <= 2Q - 1.  The weights use
    the Christoffel form 1 / sum_{n<Q} h_n(x_i)^2, which avoids forming
    w_i * exp(x_i^2) explicitly.
    """

    Q: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def gauss_hermite(cls, Q: int) -> "QuadratureRule":
        return _gauss_hermite(Q)

    @classmethod
    def for_scheme(cls, scheme: TruncationScheme, extra: int = 8) -> "QuadratureRule":
        return _gauss_hermite(scheme.N + extra)

    def grid(self, d: int) -> np.ndarray:
        """Tensor nodes, shape (Q,)*d + (d,)."""
        mesh = np.meshgrid(*([self.nodes] * d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def integrate(self, values: np.ndarray, d: int = 1) -> float:
        """Integrate samples taken on ``grid(d)`` (shape (Q,)*d)."""
        out = values
        for _ in range(d):
            out = np.tensordot(out, self.weights, axes=([0], [0]))
        return float(out)


@lru_cache(maxsize=None)
def _gauss_hermite(Q: int) -> QuadratureRule:
    if Q < 1:
        raise ValueError("Q must be >= 1")
    nodes, _ = roots_hermite(Q)
    h = hermite_functions(Q - 1, nodes)
    weights = 1.0 / np.sum(h * h, axis=0)
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(Q, nodes, weights)


def hermite_functions(n_max: int, x) -> np.ndarray:
    """h_0..h_{n_max} at x, shape (n_max + 1,) + x.shape.

    Runs the normalised three-term recurrence on the polynomial part with a
    per-point running log-scale and recombines as sign * exp(log|p| - x^2/2),
    so large |x| neither overflows nor underflows prematurely.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    log_scale = -0.5 * x * x
    prev = np.zeros_like(x)
    cur = np.full_like(x, PI_M14)
    with np.errstate(under="ignore", divide="ignore"):
        out[0] = PI_M14 * np.exp(log_scale)
        for n in range(n_max):
            nxt = math.sqrt(2.0 / (n + 1)) * x * cur - math.sqrt(n / (n + 1)) * prev
            prev, cur = cur, nxt
            big = np.abs(cur) > _RESCALE
            if np.any(big):
                cur = np.where(big, cur / _RESCALE, cur)
                prev = np.where(big, prev / _RESCALE, prev)
                log_scale = log_scale + np.where(big, math.log(_RESCALE), 0.0)
            out[n + 1] = np.sign(cur) * np.exp(np.log(np.abs(cur)) + log_scale)
    return out


def hermite_eval(k, x) -> float:
    """h_k(x) = prod_i h_{k_i}(x_i) for one multi-index and one point."""
    k = np.atleast_1d(np.asarray(k, dtype=int))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if k.shape != x.shape:
        raise ValueError("multi-index and point must have the same dimension")
    if np.any(k < 0):
        raise ValueError("multi-index entries must be nonnegative")
    if not np.all(np.isfinite(x)):
        raise ValueError("point must be finite")
    val = 1.0
    for ki, xi in zip(k, x):
        val *= hermite_functions(int(ki), xi)[int(ki)]
    return float(val)


def _axis_tables(scheme: TruncationScheme, points: np.ndarray) -> list[np.ndarray]:
    return [hermite_functions(scheme.N, points[..., a]) for a in range(scheme.d)]


def _basis_values(scheme: TruncationScheme, points: np.ndarray) -> np.ndarray:
    """h_k(points) for every k in the scheme, shape (n,) + points.shape[:-1]."""
    tables = _axis_tables(scheme, points)
    idx = scheme.indices
    vals = tables[0][idx[:, 0]]
    for a in range(1, scheme.d):
        vals = vals * tables[a][idx[:, a]]
    return vals


@dataclass(frozen=True)
class HermiteCoeffs:
    """Truncated coefficient vector c_k = <f, h_k>_0, |k| <= N.

    ``aliasing`` carries the estimated truncation/quadrature error of whatever
    produced the vector (0 for exact constructions).
    """

    scheme: TruncationScheme
    values: np.ndarray
    aliasing: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.scheme.size,):
            raise ValueError(f"expected {self.scheme.size} coefficients, got shape {vals.shape}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, scheme: TruncationScheme) -> "HermiteCoeffs":
        return cls(scheme, np.zeros(scheme.size))

    @property
    def d(self) -> int:
        return self.scheme.d

    @property
    def N(self) -> int:
        return self.scheme.N

    def __getitem__(self, k) -> float:
        return float(self.values[self.scheme.index_of(k)])

    def resized(self, N: int) -> "HermiteCoeffs":
        """Pad with zeros or truncate to total degree N."""
        new = TruncationScheme(self.d, N)
        if N >= self.N:
            vals = np.zeros(new.size)
            vals[: self.scheme.size] = self.values
            return HermiteCoeffs(new, vals, self.aliasing)
        dropped = float(np.linalg.norm(self.values[new.size :]))
        return HermiteCoeffs(new, self.values[: new.size], self.aliasing + dropped)

    def _aligned(self, other: "HermiteCoeffs"):
        if self.d != other.d:
            raise ValueError("dimension mismatch")
        N = max(self.N, other.N)
        return self.resized(N), other.resized(N)

    def __add__(self, other: "HermiteCoeffs") -> "HermiteCoeffs":
        a, b = self._aligned(other)
        return HermiteCoeffs(a.scheme, a.values + b.values, a.aliasing + b.aliasing)

    def __sub__(self, other: "HermiteCoeffs") -> "HermiteCoeffs":
        a, b = self._aligned(other)
        return HermiteCoeffs(a.scheme, a.values - b.values, a.aliasing + b.aliasing)

    def __mul__(self, s: float) -> "HermiteCoeffs":
        return HermiteCoeffs(self.scheme, self.values * s, abs(s) * self.aliasing)

    __rmul__ = __mul__

    def __neg__(self) -> "HermiteCoeffs":
        return self * -1.0

    def evaluate(self, points) -> np.ndarray:
        """Reconstruct sum_k c_k h_k at points of shape (..., d)."""
        pts = np.asarray(points, dtype=float)
        if self.d == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
            pts = pts[..., None]
        vals = _basis_values(self.scheme, pts)
        return np.tensordot(self.values, vals, axes=([0], [0]))

    def to_json(self) -> str:
        return json.dumps(
            {"d": self.d, "N": self.N, "order": "graded-lex", "coeffs": self.values.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "HermiteCoeffs":
        obj = json.loads(text)
        if obj.get("order") != "graded-lex":
            raise ValueError(f"unsupported coefficient order {obj.get('order')!r}")
        return cls(TruncationScheme(int(obj["d"]), int(obj["N"])), np.array(obj["coeffs"], float))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index"] + [f"k_{a + 1}" for a in range(self.d)] + ["value"])
        for i, (k, v) in enumerate(zip(self.scheme.indices, self.values)):
            w.writerow([i, *k.tolist(), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "HermiteCoeffs":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        d = len(header) - 2
        ks = np.array([[int(v) for v in r[1 : 1 + d]] for r in body], dtype=int)
        N = int(ks.sum(axis=1).max()) if len(ks) else 0
        scheme = TruncationScheme(d, N)
        vals = np.zeros(scheme.size)
        for k, r in zip(ks, body):
            vals[scheme.index_of(k)] = float(r[-1])
        return cls(scheme, vals)


def basis_vector(scheme: TruncationScheme, k) -> HermiteCoeffs:
    vals = np.zeros(scheme.size)
    vals[scheme.index_of(k)] = 1.0
    return HermiteCoeffs(scheme, vals)


def hermite_transform(
    f: Callable[[np.ndarray], np.ndarray],
    scheme: TruncationScheme,
    quad: QuadratureRule | None = None,
) -> HermiteCoeffs:
    """Quadrature coefficients c_k ~ int f h_k dx for |k| <= N.

    ``f`` receives the tensor grid of shape (Q,)*d + (d,) and returns values of
    shape (Q,)*d.  The aliasing estimate is the l2 size of the next few degree
    shells beyond N that the rule can still resolve.
    """
    quad = quad or QuadratureRule.for_scheme(scheme)
    if quad.Q < scheme.N + 1:
        raise ValueError(f"quadrature with Q={quad.Q} cannot resolve degree N={scheme.N}")
    d = scheme.d
    n_tail = min(quad.Q - 1, scheme.N + 4)
    grid = quad.grid(d)
    values = np.asarray(f(grid), dtype=float)
    if values.shape != (quad.Q,) * d:
        raise ValueError(f"f returned shape {values.shape}, expected {(quad.Q,) * d}")
    B = hermite_functions(n_tail, quad.nodes) * quad.weights  # (n_tail+1, Q)
    full = values
    for _ in range(d):
        # contract the leading node axis; the new degree axis goes last
        full = np.tensordot(full, B, axes=([0], [1]))
    wide = TruncationScheme(d, n_tail)
    coeffs_wide = full[tuple(wide.indices.T)]
    tail = coeffs_wide[scheme.size :]
    if tail.size:
        aliasing = float(np.linalg.norm(tail))
    else:
        top = coeffs_wide[scheme.degrees == scheme.N]
        aliasing = float(np.linalg.norm(top))
    return HermiteCoeffs(scheme, coeffs_wide[: scheme.size], aliasing)


def _ladder(c: HermiteCoeffs, axis: int, sign: float) -> HermiteCoeffs:
    # d/dx_i  h_n = sqrt(n/2) h_{n-1} - sqrt((n+1)/2) h_{n+1}   (sign = -1)
    # x_i     h_n = sqrt(n/2) h_{n-1} + sqrt((n+1)/2) h_{n+1}   (sign = +1)
    if not 0 <= axis < c.d:
        raise ValueError(f"axis {axis} out of range for d={c.d}")
    out_scheme = c.scheme.extended(1)
    idx = c.scheme.indices
    n = idx[:, axis].astype(float)
    table = _lookup(c.d, out_scheme.N)
    out = np.zeros(out_scheme.size)
    up = idx.copy()
    up[:, axis] += 1
    np.add.at(out, table[tuple(up.T)], sign * np.sqrt((n + 1) / 2) * c.values)
    has_down = idx[:, axis] > 0
    down = idx[has_down].copy()
    down[:, axis] -= 1
    np.add.at(out, table[tuple(down.T)], np.sqrt(n[has_down] / 2) * c.values[has_down])
    return HermiteCoeffs(out_scheme, out, c.aliasing)


def derivative_coeffs(c: HermiteCoeffs, axis: int = 0) -> HermiteCoeffs:
    """Exact coefficients of the partial derivative along ``axis`` (degree N+1)."""
    return _ladder(c, axis, -1.0)


def multiply_by_coordinate(c: HermiteCoeffs, axis: int = 0) -> HermiteCoeffs:
    """Exact coefficients of x_axis * f (degree N+1)."""
    return _ladder(c, axis, 1.0)


@lru_cache(maxsize=None)
def _ladder_matrix(d: int, N: int, axis: int, sign: float) -> np.ndarray:
    scheme = TruncationScheme(d, N)
    eye = np.eye(scheme.size)
    cols = [_ladder(HermiteCoeffs(scheme, eye[i]), axis, sign).values for i in range(scheme.size)]
    m = np.array(cols).T
    m.flags.writeable = False
    return m


def derivative_matrix(scheme: TruncationScheme, axis: int = 0) -> np.ndarray:
    """Dense matrix of d/dx_axis from degree N to degree N+1."""
    return _ladder_matrix(scheme.d, scheme.N, axis, -1.0)


def coordinate_matrix(scheme: TruncationScheme, axis: int = 0) -> np.ndarray:
    """Dense matrix of multiplication by x_axis from degree N to degree N+1."""
    return _ladder_matrix(scheme.d, scheme.N, axis, 1.0)


@lru_cache(maxsize=None)
def _integrals_1d(N: int) -> np.ndarray:
    # int h_n = sqrt(2 pi) |h_n(0)| for even n, 0 for odd n (h_n is a Fourier eigenfunction)
    h0 = hermite_functions(N, 0.0)
    out = np.where(np.arange(N + 1) % 2 == 0, math.sqrt(2 * math.pi) * np.abs(h0), 0.0)
    out.flags.writeable = False
    return out


def integrals(scheme: TruncationScheme) -> np.ndarray:
    """int h_k dx over R^d for every k in the scheme."""
    one = _integrals_1d(scheme.N)
    idx = scheme.indices
    out = one[idx[:, 0]].copy()
    for a in range(1, scheme.d):
        out *= one[idx[:, a]]
    return out
