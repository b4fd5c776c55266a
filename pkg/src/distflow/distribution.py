"""Tempered distributions y, sigma_ij, b_i and the coefficient fields they induce.

Five representations are supported: Dirac masses, Gaussian densities,
constant functions, smooth functions given as vectorised callables, and
truncated Hermite expansions.  The central routine is
``pair_translated(a, b, x) = <a, tau_x b>``, which dispatches on the pair of
representations:

    b Dirac            a(b_loc + x)            (a must be pointwise)
    a Dirac            b(a_loc - x)
    a or b constant    c * int(other)          (other must be integrable)
    Gaussian/Gaussian  closed form
    one side Gaussian  Gauss-Hermite expectation of the other side
    one side Hermite   Hermite-function quadrature on its nodes
    smooth/smooth      trapezoid rule on a window around the first factor

Two Diracs, or two constants, give a divergent pairing and raise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.linalg import expm

from .hermite import (
    HermiteCoeffs,
    QuadratureRule,
    TruncationScheme,
    derivative_coeffs,
    derivative_matrix,
    hermite_functions,
    hermite_transform,
    integrals,
)
from .sobolev import SobolevElement, dirac_coeffs, sobolev_norm

__all__ = [
    "UnsupportedPairingError",
    "DivergentPairingError",
    "NotTruncatableError",
    "TemperedDistribution",
    "DiracDelta",
    "GaussianDensity",
    "ConstantFunction",
    "SmoothFunction",
    "HermiteTruncation",
    "CoefficientMatrix",
    "Fields",
    "translate",
    "reflect",
    "pair",
    "pair_translated",
    "coefficient_field",
    "coefficient_fields",
    "lipschitz_probe",
    "gaussian_coeffs",
    "to_coeffs",
    "translated_coeffs",
    "translate_by_expm",
    "as_element",
    "apply_A",
    "apply_L",
    "distribution_from_config",
]

GH_NODES = {1: 48, 2: 24, 3: 12}


class UnsupportedPairingError(TypeError):
    pass


class DivergentPairingError(ValueError):
    pass


class NotTruncatableError(TypeError):
    pass


def _point(x, d: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise ValueError(f"expected a point in R^{d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point must be finite")
    return x


def _points(x, d: int) -> np.ndarray:
    """Coerce to shape (..., d); a bare array in d=1 gains a trailing axis."""
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != d:
        raise ValueError(f"points must have trailing dimension {d}")
    return x


class TemperedDistribution:
    """Common interface; concrete variants below."""

    d: int

    def translate(self, x) -> "TemperedDistribution":
        raise NotImplementedError

    def reflect(self) -> "TemperedDistribution":
        raise NotImplementedError

    def evaluate(self, points) -> np.ndarray:
        raise UnsupportedPairingError(f"{type(self).__name__} has no pointwise values")

    def integral(self) -> float:
        raise UnsupportedPairingError(f"{type(self).__name__} is not integrable")

    def admissible(self, p: float) -> bool:
        """Whether this distribution lies in S_p."""
        return True


@dataclass(frozen=True, eq=False)
class DiracDelta(TemperedDistribution):
    location: np.ndarray

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.location, dtype=float)).copy()
        loc.flags.writeable = False
        object.__setattr__(self, "location", loc)

    @property
    def d(self) -> int:
        return self.location.shape[0]

    def translate(self, x) -> "DiracDelta":
        return DiracDelta(self.location + _point(x, self.d))

    def reflect(self) -> "DiracDelta":
        return DiracDelta(-self.location)

    def integral(self) -> float:
        return 1.0

    def admissible(self, p: float) -> bool:
        return p < -self.d / 4


@dataclass(frozen=True, eq=False)
class GaussianDensity(TemperedDistribution):
    """mass * N(mean, cov) density."""

    mean: np.ndarray
    cov: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(mean.shape[0])
        cov = np.atleast_2d(cov).copy()
        if cov.shape != (mean.shape[0],) * 2:
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("covariance must be symmetric positive definite")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "mass", float(self.mass))

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.cov)

    def translate(self, x) -> "GaussianDensity":
        return GaussianDensity(self.mean + _point(x, self.d), self.cov, self.mass)

    def reflect(self) -> "GaussianDensity":
        return GaussianDensity(-self.mean, self.cov, self.mass)

    def scaled(self, a: float) -> "GaussianDensity":
        return GaussianDensity(self.mean, self.cov, self.mass * a)

    def evaluate(self, points) -> np.ndarray:
        pts = _points(points, self.d)
        return _gauss_pdf(pts - self.mean, self.cov) * self.mass

    def integral(self) -> float:
        return self.mass


def _gauss_pdf(u: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    inv = np.linalg.inv(cov)
    quad = np.einsum("...i,ij,...j->...", u, inv, u)
    return np.exp(-0.5 * quad) / math.sqrt((2 * math.pi) ** d * np.linalg.det(cov))


@dataclass(frozen=True, eq=False)
class ConstantFunction(TemperedDistribution):
    value: float
    dim: int = 1

    @property
    def d(self) -> int:
        return self.dim

    def translate(self, x) -> "ConstantFunction":
        _point(x, self.d)
        return self

    def reflect(self) -> "ConstantFunction":
        return self

    def evaluate(self, points) -> np.ndarray:
        pts = _points(points, self.d)
        return np.full(pts.shape[:-1], float(self.value))

    def integral(self) -> float:
        if self.value == 0:
            return 0.0
        raise DivergentPairingError("a nonzero constant is not integrable")

    def admissible(self, p: float) -> bool:
        return self.value == 0 or p < -self.d / 4


@dataclass(frozen=True, eq=False)
class SmoothFunction(TemperedDistribution):
    """A rapidly decaying smooth function given as a vectorised callable.

    ``func`` maps points of shape (..., d) to values of shape (...).  ``center``
    and ``scale`` locate the bulk of the function for quadrature; ``mass`` may
    be supplied when the integral is known in closed form.
    """

    func: Callable[[np.ndarray], np.ndarray]
    dim: int = 1
    center: float | Sequence[float] = 0.0
    scale: float = 1.0
    mass: float | None = None
    label: str = ""

    @property
    def d(self) -> int:
        return self.dim

    def _center(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.center, dtype=float), (self.d,))

    def translate(self, x) -> "SmoothFunction":
        x = _point(x, self.d)
        if not np.any(x):
            return self
        f = self.func
        return SmoothFunction(
            lambda p: f(_points(p, self.d) - x),
            self.d,
            tuple(self._center() + x),
            self.scale,
            self.mass,
            self.label,
        )

    def reflect(self) -> "SmoothFunction":
        f = self.func
        return SmoothFunction(
            lambda p: f(-_points(p, self.d)),
            self.d,
            tuple(-self._center()),
            self.scale,
            self.mass,
            self.label and f"reflect({self.label})",
        )

    def evaluate(self, points) -> np.ndarray:
        pts = _points(points, self.d)
        return np.asarray(self.func(pts), dtype=float) * np.ones(pts.shape[:-1])

    def integral(self) -> float:
        if self.mass is not None:
            return float(self.mass)
        grid, w = _window_rule(self._center(), self.scale, self.d)
        return float(np.sum(self.evaluate(grid) * w))


@dataclass(frozen=True, eq=False)
class HermiteTruncation(TemperedDistribution):
    """Finite Hermite expansion, nominally an element of S_p.

    ``reprojection_error`` is the L^2 mass lost by the last translation
    re-projection (zero for expansions that were never translated).
    """

    coeffs: HermiteCoeffs
    p: float = 0.0
    reprojection_error: float = 0.0
    tolerance: float = 1e-8

    @property
    def d(self) -> int:
        return self.coeffs.d

    @property
    def flagged(self) -> bool:
        return self.reprojection_error > self.tolerance

    def translate(self, x, N_out: int | None = None, Q: int | None = None) -> "HermiteTruncation":
        x = _point(x, self.d)
        if not np.any(x):
            return self
        N_out = self.coeffs.N if N_out is None else N_out
        scheme = TruncationScheme(self.d, N_out)
        if Q is None:
            Q = N_out + 16 + int(math.ceil(2.0 * float(x @ x)))
        c = self.coeffs
        wide = scheme.extended(16)
        full = hermite_transform(lambda g: c.evaluate(g - x), wide, QuadratureRule.gauss_hermite(Q + 16))
        # mass pushed past N_out is what the re-projection drops
        lost = float(np.linalg.norm(full.values[scheme.size :]))
        out = full.resized(N_out)
        return HermiteTruncation(
            HermiteCoeffs(scheme, out.values, lost + full.aliasing), self.p, lost + full.aliasing, self.tolerance
        )

    def reflect(self) -> "HermiteTruncation":
        sign = np.where(self.coeffs.scheme.degrees % 2 == 0, 1.0, -1.0)
        c = HermiteCoeffs(self.coeffs.scheme, sign * self.coeffs.values, self.coeffs.aliasing)
        return HermiteTruncation(c, self.p, self.reprojection_error, self.tolerance)

    def evaluate(self, points) -> np.ndarray:
        return self.coeffs.evaluate(_points(points, self.d))

    def integral(self) -> float:
        return float(integrals(self.coeffs.scheme) @ self.coeffs.values)


def translate(y: TemperedDistribution, x, **kwargs) -> TemperedDistribution:
    """tau_x y, defined by <tau_x y, f> = <y, tau_{-x} f>."""
    return y.translate(x, **kwargs) if kwargs else y.translate(x)


def reflect(y: TemperedDistribution) -> TemperedDistribution:
    """y~, defined by <y~, f> = <y, f~> with f~(r) = f(-r)."""
    return y.reflect()


def translate_by_expm(c: HermiteCoeffs, x, pad: int = 24) -> HermiteCoeffs:
    """tau_x via exp(-x . grad) on a padded truncation; trustworthy for |x| <= 1."""
    x = _point(x, c.d)
    big = TruncationScheme(c.d, c.N + pad)
    gen = np.zeros((big.size, big.size))
    for a in range(c.d):
        gen -= x[a] * derivative_matrix(big, a)[: big.size]
    out = expm(gen) @ c.resized(big.N).values
    return HermiteCoeffs(big, out).resized(c.N)


# ---------------------------------------------------------------- quadrature

@lru_cache(maxsize=None)
def _normal_rule(n: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    # tensor Gauss-Hermite rule for E f(Z), Z ~ N(0, I_d)
    z, w = hermegauss(n)
    w = w / math.sqrt(2 * math.pi)
    mesh = np.stack(np.meshgrid(*([z] * d), indexing="ij"), axis=-1).reshape(-1, d)
    wts = np.ones(len(mesh))
    for a, wa in enumerate(np.meshgrid(*([w] * d), indexing="ij")):
        wts = wts * wa.reshape(-1)
    mesh.flags.writeable = False
    wts.flags.writeable = False
    return mesh, wts


def _window_rule(center: np.ndarray, scale: float, d: int, half_width: float = 12.0):
    n = {1: 2001, 2: 241, 3: 61}[d]
    t = np.linspace(-half_width, half_width, n) * scale
    h = t[1] - t[0]
    w1 = np.full(n, h)
    w1[[0, -1]] = h / 2
    mesh = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d) + center
    wts = np.ones(len(mesh))
    for wa in np.meshgrid(*([w1] * d), indexing="ij"):
        wts = wts * wa.reshape(-1)
    return mesh, wts


def _gaussian_expectation(g: GaussianDensity, func, x: np.ndarray, sign: float) -> np.ndarray:
    """mass * E func(sign * x + mean + L Z) for each point x, shape (P,)."""
    z, w = _normal_rule(GH_NODES[g.d], g.d)
    nodes = g.mean + z @ g.chol.T  # (n, d)
    pts = sign * x[:, None, :] + nodes[None, :, :]
    vals = func(pts)  # (P, n)
    return g.mass * (vals * w).sum(axis=-1)


# ------------------------------------------------------------------- pairing

def pair_translated(a: TemperedDistribution, b: TemperedDistribution, x) -> np.ndarray:
    """<a, tau_x b> at each point x (shape (..., d)); result shape (...)."""
    if a.d != b.d:
        raise ValueError("dimension mismatch")
    d = a.d
    x = _points(x, d)
    shape = x.shape[:-1]
    xs = x.reshape(-1, d)
    out = _pair_flat(a, b, xs)
    return out.reshape(shape)


def pair(a: TemperedDistribution, b: TemperedDistribution) -> float:
    """<a, b>."""
    return float(pair_translated(a, b, np.zeros(a.d)))


def _pair_flat(a, b, xs: np.ndarray) -> np.ndarray:
    if isinstance(a, DiracDelta) and isinstance(b, DiracDelta):
        raise DivergentPairingError("the pairing of two Dirac masses is not defined")
    if isinstance(b, DiracDelta):
        return a.evaluate(b.location + xs)
    if isinstance(a, DiracDelta):
        return b.evaluate(a.location - xs)
    if isinstance(a, ConstantFunction) and isinstance(b, ConstantFunction):
        if a.value == 0 or b.value == 0:
            return np.zeros(len(xs))
        raise DivergentPairingError("the pairing of two nonzero constants diverges")
    if isinstance(a, ConstantFunction):
        return np.full(len(xs), a.value * b.integral() if a.value else 0.0)
    if isinstance(b, ConstantFunction):
        return np.full(len(xs), b.value * a.integral() if b.value else 0.0)
    if isinstance(a, GaussianDensity) and isinstance(b, GaussianDensity):
        u = a.mean - (b.mean + xs)
        return a.mass * b.mass * _gauss_pdf(u, a.cov + b.cov)
    if isinstance(b, GaussianDensity):
        return _gaussian_expectation(b, a.evaluate, xs, +1.0)
    if isinstance(a, GaussianDensity):
        return _gaussian_expectation(a, b.evaluate, xs, -1.0)
    if isinstance(b, HermiteTruncation):
        return _hermite_quadrature(b, a.evaluate, xs, +1.0)
    if isinstance(a, HermiteTruncation):
        return _hermite_quadrature(a, b.evaluate, xs, -1.0)
    if isinstance(a, SmoothFunction) and isinstance(b, SmoothFunction):
        grid, w = _window_rule(a._center(), a.scale, a.d)
        fa = a.evaluate(grid) * w
        vals = b.evaluate(grid[None, :, :] - xs[:, None, :])
        return vals @ fa
    raise UnsupportedPairingError(f"no pairing rule for {type(a).__name__} x {type(b).__name__}")


def _hermite_quadrature(h: HermiteTruncation, func, xs: np.ndarray, sign: float) -> np.ndarray:
    # int h(u) func(u + sign*x) du on h's Gauss-Hermite grid
    quad = QuadratureRule.gauss_hermite(h.coeffs.N + 24)
    grid = quad.grid(h.d).reshape(-1, h.d)
    wts = np.ones(len(grid))
    for wa in np.meshgrid(*([quad.weights] * h.d), indexing="ij"):
        wts = wts * wa.reshape(-1)
    hw = h.evaluate(grid) * wts
    vals = func(grid[None, :, :] + sign * xs[:, None, :])
    return (vals * hw).sum(axis=-1)


def coefficient_field(sigma_ij: TemperedDistribution, y: TemperedDistribution, x) -> np.ndarray:
    """sigma_ij-bar(x) = <sigma_ij, tau_x y> = (sigma_ij * y~)(x)."""
    field_of = getattr(sigma_ij, "field_of", None)
    if field_of is not None:
        # nonlinear coefficient functionals plug in here
        return field_of(y, x)
    return pair_translated(sigma_ij, y, x)


# ------------------------------------------------------------ coefficient sets

@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """sigma = (sigma_ij) d x d and b = (b_i), all tempered distributions."""

    sigma: tuple
    b: tuple

    def __post_init__(self):
        sigma = tuple(tuple(row) for row in self.sigma)
        b = tuple(self.b)
        d = len(b)
        if len(sigma) != d or any(len(row) != d for row in sigma):
            raise ValueError("sigma must be d x d and b of length d")
        if any(e.d != d for row in sigma for e in row) or any(e.d != d for e in b):
            raise ValueError("every coefficient must live on R^d with the same d")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "b", b)

    @property
    def d(self) -> int:
        return len(self.b)

    @classmethod
    def constant(cls, sigma, b) -> "CoefficientMatrix":
        """Constant-function coefficients; with a mass-1 y the fields equal sigma, b."""
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        d = len(b)
        return cls(
            tuple(tuple(ConstantFunction(float(v), d) for v in row) for row in sigma),
            tuple(ConstantFunction(float(v), d) for v in b),
        )

    @classmethod
    def zero(cls, d: int = 1) -> "CoefficientMatrix":
        return cls.constant(np.zeros((d, d)), np.zeros(d))

    def pairings(self, phi: TemperedDistribution) -> tuple[np.ndarray, np.ndarray]:
        """(<sigma, phi>, <b, phi>) as a d x d matrix and a d-vector."""
        s = np.array([[pair(e, phi) for e in row] for row in self.sigma])
        bb = np.array([pair(e, phi) for e in self.b])
        return s, bb


@dataclass(frozen=True, eq=False)
class Fields:
    """Vectorised coefficient fields sigma-bar(x), b-bar(x) of the driving SDE.

    ``sigma`` maps (..., d) -> (..., d, d) and ``b`` maps (..., d) -> (..., d).
    ``bound`` optionally declares sup |field| for the runtime monitor.
    """

    sigma: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    d: int = 1
    bound: float | None = None
    label: str = ""

    @classmethod
    def constant(cls, sigma, b, bound: float | None = None) -> "Fields":
        s = np.atleast_2d(np.asarray(sigma, dtype=float))
        bb = np.atleast_1d(np.asarray(b, dtype=float))

        def sig(x):
            return np.broadcast_to(s, np.shape(x)[:-1] + s.shape).copy()

        def drift(x):
            return np.broadcast_to(bb, np.shape(x)).copy()

        if bound is None:
            bound = float(max(np.abs(s).max(), np.abs(bb).max()))
        return cls(sig, drift, len(bb), bound, "constant")

    @classmethod
    def from_functions(cls, sigma, b, d: int = 1, bound: float | None = None, label: str = "") -> "Fields":
        """Wrap scalar-style callables; in d = 1 they may map (...,) -> (...)."""
        if d == 1:
            def sig(x):
                return np.asarray(sigma(x[..., 0]), dtype=float)[..., None, None] * np.ones(x.shape[:-1] + (1, 1))

            def drift(x):
                return np.asarray(b(x[..., 0]), dtype=float)[..., None] * np.ones(x.shape)

            return cls(sig, drift, 1, bound, label)
        return cls(sigma, b, d, bound, label)


def coefficient_fields(coeffs: CoefficientMatrix, y: TemperedDistribution, bound: float | None = None) -> Fields:
    """Fields x -> <sigma_ij, tau_x y>, <b_i, tau_x y> for the given y."""
    d = coeffs.d
    if y.d != d:
        raise ValueError("y and the coefficients live in different dimensions")
    consts = all(isinstance(e, ConstantFunction) for row in coeffs.sigma for e in row) and all(
        isinstance(e, ConstantFunction) for e in coeffs.b
    )
    if consts:
        s = np.array([[pair(e, y) if e.value else 0.0 for e in row] for row in coeffs.sigma])
        bb = np.array([pair(e, y) if e.value else 0.0 for e in coeffs.b])
        out = Fields.constant(s, bb, bound)
        return Fields(out.sigma, out.b, d, out.bound, "constant")

    def sig(x):
        x = _points(x, d)
        return np.stack(
            [np.stack([coefficient_field(e, y, x) for e in row], axis=-1) for row in coeffs.sigma],
            axis=-2,
        )

    def drift(x):
        x = _points(x, d)
        return np.stack([coefficient_field(e, y, x) for e in coeffs.b], axis=-1)

    return Fields(sig, drift, d, bound, "convolved")


def lipschitz_probe(field: Callable, box, grid: float | int) -> float:
    """Largest finite-difference slope of ``field`` on a regular grid over ``box``.

    ``box`` is a sequence of (lo, hi) per axis; ``grid`` is either a spacing
    (float) or a point count per axis (int).  Vector- or matrix-valued fields
    use the Frobenius norm of differences.  Advisory only.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    d = box.shape[0]
    axes = []
    for lo, hi in box:
        n = grid if isinstance(grid, (int, np.integer)) else int(round((hi - lo) / grid)) + 1
        axes.append(np.linspace(lo, hi, max(n, 2)))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = np.asarray(field(mesh), dtype=float)
    vals = vals.reshape(mesh.shape[:-1] + (-1,))
    slope2 = np.zeros(tuple(len(a) - 1 for a in axes))
    for a in range(d):
        h = axes[a][1] - axes[a][0]
        diff = np.diff(vals, axis=a)
        sl = [slice(0, len(ax) - 1) for ax in axes]
        slope2 = slope2 + (np.linalg.norm(diff, axis=-1)[tuple(sl)] / h) ** 2
    return float(np.sqrt(slope2.max()))


# -------------------------------------------------------- coefficient forms

def _gaussian_coeffs_1d(mu: np.ndarray, v: float, N: int) -> np.ndarray:
    """Hermite coefficients of exp(-(x-mu)^2 / (2v)) / sqrt(2 pi v), shape (N+1, len(mu)).

    Integrating g' against h_k by parts gives
        sqrt((k+1)/2) (v+1) c_{k+1} = mu c_k + sqrt(k/2) (v-1) c_{k-1},
    started from c_0 in closed form; the recurrence runs with a log-scale so
    c_0 may underflow without losing the vector.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    log_c0 = (
        -0.25 * math.log(math.pi)
        - 0.5 * math.log(2 * math.pi * v)
        + 0.5 * math.log(2 * math.pi * v / (1 + v))
        - mu**2 / (2 * (1 + v))
    )
    out = np.empty((N + 1, len(mu)))
    prev = np.zeros_like(mu)
    cur = np.ones_like(mu)
    log_scale = log_c0.copy()
    with np.errstate(under="ignore", divide="ignore"):
        out[0] = np.exp(log_scale)
        for k in range(N):
            nxt = (mu * cur + math.sqrt(k / 2) * (v - 1) * prev) / (math.sqrt((k + 1) / 2) * (v + 1))
            prev, cur = cur, nxt
            big = np.abs(cur) > 1e150
            if np.any(big):
                cur = np.where(big, cur * 1e-150, cur)
                prev = np.where(big, prev * 1e-150, prev)
                log_scale = log_scale + np.where(big, math.log(1e150), 0.0)
            out[k + 1] = np.sign(cur) * np.exp(np.log(np.abs(cur)) + log_scale)
    return out


def gaussian_coeffs(g: GaussianDensity, scheme: TruncationScheme, means=None) -> np.ndarray:
    """Hermite coefficients of g (or of g re-centred at each row of ``means``).

    Closed form for diagonal covariance; shape (scheme.size,) or (M, size).
    """
    if not np.allclose(g.cov, np.diag(np.diag(g.cov))):
        if means is not None:
            return np.stack([gaussian_coeffs(GaussianDensity(m, g.cov, g.mass), scheme) for m in means])
        c = hermite_transform(lambda p: g.evaluate(p), scheme, QuadratureRule.gauss_hermite(2 * scheme.N + 40))
        return c.values
    single = means is None
    mus = np.atleast_2d(g.mean if single else np.asarray(means, dtype=float))
    idx = scheme.indices
    vals = None
    for a in range(g.d):
        tab = _gaussian_coeffs_1d(mus[:, a], float(g.cov[a, a]), scheme.N)  # (N+1, M)
        part = tab[idx[:, a]].T  # (M, n)
        vals = part if vals is None else vals * part
    vals = vals * g.mass
    return vals[0] if single else vals


def to_coeffs(y: TemperedDistribution, scheme: TruncationScheme) -> HermiteCoeffs:
    """Truncated Hermite coefficients of y."""
    if isinstance(y, HermiteTruncation):
        return y.coeffs.resized(scheme.N)
    if isinstance(y, DiracDelta):
        return dirac_coeffs(y.location, scheme)
    if isinstance(y, GaussianDensity):
        return HermiteCoeffs(scheme, gaussian_coeffs(y, scheme))
    if isinstance(y, SmoothFunction):
        return hermite_transform(y.evaluate, scheme, QuadratureRule.gauss_hermite(2 * scheme.N + 40))
    if isinstance(y, ConstantFunction) and y.value == 0:
        return HermiteCoeffs.zeros(scheme)
    raise NotTruncatableError(f"{type(y).__name__} has no coefficient representation")


def translated_coeffs(y: TemperedDistribution, X: np.ndarray, scheme: TruncationScheme) -> np.ndarray:
    """Rows of coefficients of tau_{X_m} y for each point X_m, shape (M, size)."""
    X = _points(X, y.d).reshape(-1, y.d)
    if isinstance(y, GaussianDensity) and np.allclose(y.cov, np.diag(np.diag(y.cov))):
        return gaussian_coeffs(y, scheme, y.mean + X)
    if isinstance(y, DiracDelta):
        pts = y.location + X
        idx = scheme.indices
        vals = None
        for a in range(y.d):
            tab = hermite_functions(scheme.N, pts[:, a])
            part = tab[idx[:, a]].T
            vals = part if vals is None else vals * part
        return vals
    return np.stack([to_coeffs(translate(y, x), scheme).values for x in X])


def as_element(y: TemperedDistribution, scheme: TruncationScheme, p: float = 0.0) -> SobolevElement:
    return SobolevElement(to_coeffs(y, scheme), p)


# -------------------------------------------------------- operators A_j and L

def _phi_parts(phi):
    if isinstance(phi, SobolevElement):
        return phi.coeffs, phi.p
    if isinstance(phi, HermiteCoeffs):
        return phi, 0.0
    raise TypeError("phi must be a SobolevElement or HermiteCoeffs")


def apply_A(coeffs: CoefficientMatrix, phi, j: int) -> SobolevElement:
    """A_j phi = - sum_i <sigma_ij, phi> d_i phi  (degree N+1, index p-1)."""
    c, p = _phi_parts(phi)
    trunc = HermiteTruncation(c, p)
    out = HermiteCoeffs.zeros(c.scheme.extended(1))
    for i in range(coeffs.d):
        s = pair(coeffs.sigma[i][j], trunc)
        if s:
            out = out - derivative_coeffs(c, i) * s
    return SobolevElement(out, p - 1)


def apply_L(coeffs: CoefficientMatrix, phi, split: bool = False):
    """L phi = 1/2 sum (<s,phi><s,phi>^t)_ij d_ij phi - sum <b,phi>_i d_i phi.

    Degree N+2, index p-1.  With ``split=True`` returns the (diffusion, drift)
    parts separately.
    """
    c, p = _phi_parts(phi)
    trunc = HermiteTruncation(c, p)
    s, bb = coeffs.pairings(trunc)
    a = s @ s.T
    wide = c.scheme.extended(2)
    diff = HermiteCoeffs.zeros(wide)
    drift = HermiteCoeffs.zeros(wide)
    first = [derivative_coeffs(c, i) for i in range(coeffs.d)]
    for i in range(coeffs.d):
        for j in range(coeffs.d):
            if a[i, j]:
                diff = diff + derivative_coeffs(first[i], j) * (0.5 * a[i, j])
        if bb[i]:
            drift = drift - first[i].resized(wide.N) * bb[i]
    if split:
        return SobolevElement(diff, p - 1), SobolevElement(drift, p - 1)
    return SobolevElement(diff + drift, p - 1)


# --------------------------------------------------------------- from config

_EXPR_NAMESPACE = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "tanh", "exp", "log", "sqrt", "abs", "arctan", "cosh", "sinh", "pi", "where", "minimum", "maximum")
}


def _expr_function(expr: str, d: int):
    code = compile(expr, "<distribution>", "eval")

    def f(p):
        p = _points(p, d)
        env = dict(_EXPR_NAMESPACE)
        env["x"] = p[..., 0] if d == 1 else p
        for a in range(d):
            env[f"x{a + 1}"] = p[..., a]
        return eval(code, {"__builtins__": {}}, env)

    return f


def distribution_from_config(spec, d: int) -> TemperedDistribution:
    """Build a distribution from a config mapping.

    Schema (``variant`` selects the rest):
        {variant = "dirac", location = [..]}
        {variant = "gaussian", mean = [..], cov = [[..]] | var = float, mass = 1.0}
        {variant = "constant", value = float}
        {variant = "zero"}
        {variant = "smooth", expr = "tanh(x)", center = 0.0, scale = 1.0, mass = float?}
        {variant = "hermite", N = int, coeffs = [..], p = 0.0}
    ``expr`` sees ``x`` (the coordinate in d = 1, the (..., d) array otherwise),
    ``x1``..``xd`` and common numpy functions.  A bare number means a constant.
    """
    if isinstance(spec, (int, float)):
        return ConstantFunction(float(spec), d)
    if not isinstance(spec, dict) or "variant" not in spec:
        raise ValueError(f"distribution spec needs a 'variant' key: {spec!r}")
    spec = dict(spec)
    kind = spec.pop("variant")
    allowed = {
        "dirac": {"location"},
        "gaussian": {"mean", "cov", "var", "mass"},
        "constant": {"value"},
        "zero": set(),
        "smooth": {"expr", "center", "scale", "mass"},
        "hermite": {"N", "coeffs", "p"},
    }
    if kind not in allowed:
        raise ValueError(f"unknown distribution variant {kind!r}; expected one of {sorted(allowed)}")
    unknown = set(spec) - allowed[kind]
    if unknown:
        raise ValueError(f"unknown keys for variant {kind!r}: {sorted(unknown)}")
    if kind == "dirac":
        return DiracDelta(np.broadcast_to(np.asarray(spec.get("location", 0.0), float), (d,)))
    if kind == "gaussian":
        mean = np.broadcast_to(np.asarray(spec.get("mean", 0.0), float), (d,))
        if "cov" in spec:
            cov = np.asarray(spec["cov"], float)
        else:
            cov = float(spec.get("var", 1.0)) * np.eye(d)
        return GaussianDensity(mean, cov, float(spec.get("mass", 1.0)))
    if kind == "constant":
        return ConstantFunction(float(spec["value"]), d)
    if kind == "zero":
        return ConstantFunction(0.0, d)
    if kind == "smooth":
        return SmoothFunction(
            _expr_function(str(spec["expr"]), d),
            d,
            spec.get("center", 0.0),
            float(spec.get("scale", 1.0)),
            spec.get("mass"),
            str(spec["expr"]),
        )
    scheme = TruncationScheme(d, int(spec["N"]))
    return HermiteTruncation(HermiteCoeffs(scheme, np.asarray(spec["coeffs"], float)), float(spec.get("p", 0.0)))
