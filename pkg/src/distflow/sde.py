"""Euler-Maruyama for dX = sigma-bar(X) dB + b-bar(X) dt with explosion detection.

Brownian increments are stored on a dyadic grid (multiples of 2^-40).  Sums
of such numbers are exact as long as they stay below 2^13 in magnitude, so a
Brownian-bridge refinement reproduces every coarse increment bit for bit when
its halves are added back together.  The quantisation (about 1e-12) is far
below any step size used here.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng
from .distribution import Fields

QUANTUM = 2.0**-40
DEFAULT_THRESHOLDS = (10.0, 1e2, 1e3, 1e4)

__all__ = [
    "QUANTUM",
    "DEFAULT_THRESHOLDS",
    "SimulationConfig",
    "BrownianPath",
    "PathResult",
    "sample_brownian",
    "refine_brownian",
    "simulate_path",
    "simulate",
    "strong_error",
]


def quantize(v: np.ndarray) -> np.ndarray:
    return np.round(v / QUANTUM) * QUANTUM


def _n_steps(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"horizon T={T} is not a whole number of steps dt={dt}")
    return n


def _chunks(n: int, workers: int) -> list[slice]:
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _map_chunks(fn, n: int, workers: int) -> list:
    parts = _chunks(n, workers)
    if len(parts) == 1:
        return [fn(parts[0])]
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        return list(pool.map(fn, parts))


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 1e-3
    T: float = 1.0
    thresholds: tuple = DEFAULT_THRESHOLDS
    seed: int = 0
    paths: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        _n_steps(self.T, self.dt)
        th = tuple(float(t) for t in self.thresholds)
        if not th or any(b <= a for a, b in zip(th, th[1:])) or th[0] <= 0:
            raise ValueError("thresholds must be a nonempty increasing sequence of positive reals")
        object.__setattr__(self, "thresholds", th)
        if self.paths < 1 or self.workers < 1:
            raise ValueError("paths and workers must be >= 1")


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """A bundle of independent d-dimensional Brownian paths on a fixed grid.

    ``increments`` has shape (paths, steps, d).  Path m is generated from the
    lineage (seed, *stream, path_ids[m], level).
    """

    T: float
    dt: float
    increments: np.ndarray = field(repr=False)
    seed: int
    path_ids: np.ndarray = field(repr=False)
    level: int = 0
    stream: tuple = (rng.BROWNIAN,)

    def __post_init__(self):
        self.increments.flags.writeable = False

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def d(self) -> int:
        return self.increments.shape[2]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def values(self) -> np.ndarray:
        """W at the grid times, shape (paths, steps + 1, d), W_0 = 0."""
        out = np.zeros((self.n_paths, self.n_steps + 1, self.d))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def coarsened(self, factor: int) -> np.ndarray:
        """Increments summed over blocks of ``factor`` steps."""
        m, n, d = self.increments.shape
        if n % factor:
            raise ValueError("factor must divide the number of steps")
        return self.increments.reshape(m, n // factor, factor, d).sum(axis=2)

    def subset(self, rows) -> "BrownianPath":
        return BrownianPath(self.T, self.dt, self.increments[rows], self.seed, self.path_ids[rows], self.level, self.stream)


def sample_brownian(
    T: float,
    dt: float,
    d: int = 1,
    seed: int = 0,
    paths: int = 1,
    first_path: int = 0,
    stream: Sequence[int] = (rng.BROWNIAN,),
    workers: int = 1,
) -> BrownianPath:
    n = _n_steps(T, dt)
    ids = np.arange(first_path, first_path + paths)
    sq = math.sqrt(dt)
    out = np.empty((paths, n, d))

    def work(sl: slice):
        for m in range(sl.start, sl.stop):
            g = rng.generator(seed, *stream, int(ids[m]), 0)
            out[m] = quantize(g.standard_normal((n, d)) * sq)

    _map_chunks(work, paths, workers)
    return BrownianPath(T, dt, out, seed, ids, 0, tuple(stream))


def refine_brownian(path: BrownianPath, levels: int = 1) -> BrownianPath:
    """Halve the step ``levels`` times by Brownian-bridge midpoint sampling."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    inc = np.asarray(path.increments)
    dt = path.dt
    level = path.level
    for _ in range(levels):
        level += 1
        m, n, d = inc.shape
        half = np.empty((m, 2 * n, d))
        sd = 0.5 * math.sqrt(dt)
        for i in range(m):
            g = rng.generator(path.seed, *path.stream, int(path.path_ids[i]), level)
            xi = g.standard_normal((n, d))
            a = quantize(0.5 * inc[i] + sd * xi)
            half[i, 0::2] = a
            half[i, 1::2] = inc[i] - a  # exact: both on the dyadic grid
        inc = half
        dt = dt / 2
    return BrownianPath(path.T, dt, inc, path.seed, path.path_ids, level, path.stream)


@dataclass(frozen=True, eq=False)
class PathResult:
    """Euler-Maruyama trajectories with cemetery marking.

    ``states`` holds +inf in every coordinate at and after the explosion
    step; ``hitting_times[:, j]`` is the first grid time with |X| >=
    thresholds[j] (inf when never reached).
    """

    times: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    alive: np.ndarray = field(repr=False)
    thresholds: tuple
    hitting_times: np.ndarray = field(repr=False)
    nonfinite: np.ndarray = field(repr=False)
    dt: float
    field_max: float = 0.0
    death: np.ndarray = field(default=None, repr=False)

    @property
    def exploded(self) -> np.ndarray:
        return np.isfinite(self.death)

    @property
    def eta(self) -> np.ndarray:
        """Explosion time estimate: the grid time the path entered the cemetery.

        This is the hitting time of the largest threshold, or the step at
        which a field went non-finite; inf for paths alive at the horizon.
        """
        return self.death

    @property
    def eta_interval(self) -> tuple[np.ndarray, np.ndarray]:
        return self.eta, self.eta + self.dt

    @property
    def final(self) -> np.ndarray:
        return self.states[:, -1]


def simulate_path(
    fields: Fields,
    x0,
    brownian: BrownianPath,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    workers: int = 1,
    record_every: int = 1,
) -> PathResult:
    """Euler-Maruyama X_{n+1} = X_n + sigma-bar(X_n) dB_n + b-bar(X_n) dt.

    A path enters the cemetery (states = inf) once |X| reaches the largest
    threshold or a field returns a non-finite value.  Only alive rows are
    passed to the field callables.
    """
    thr = np.asarray(tuple(float(t) for t in thresholds))
    if thr.size == 0 or np.any(np.diff(thr) <= 0):
        raise ValueError("thresholds must be nonempty and increasing")
    d = brownian.d
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,))
    m_all, n_steps = brownian.n_paths, brownian.n_steps
    if n_steps % record_every:
        raise ValueError("record_every must divide the number of steps")
    dt = brownian.dt
    n_rec = n_steps // record_every + 1
    states = np.empty((m_all, n_rec, d))
    alive_rec = np.empty((m_all, n_rec), dtype=bool)
    hits = np.full((m_all, len(thr)), np.inf)
    bad = np.zeros(m_all, dtype=bool)
    fmax = np.zeros(m_all)
    death_all = np.full(m_all, np.inf)
    times = np.arange(n_steps + 1) * dt

    def work(sl: slice):
        dW = brownian.increments[sl]
        m = dW.shape[0]
        X = np.tile(x0, (m, 1))
        alive = np.ones(m, dtype=bool)
        hit = np.full((m, len(thr)), np.inf)
        r0 = math.sqrt(float(x0 @ x0))
        hit[:, thr <= r0] = 0.0
        if r0 >= thr[-1]:
            alive[:] = False
            X[:] = np.inf
        nonfin = np.zeros(m, dtype=bool)
        death = np.where(alive, np.inf, 0.0)
        fm = np.zeros(m)
        states[sl, 0] = X
        alive_rec[sl, 0] = alive
        for n in range(n_steps):
            idx = np.flatnonzero(alive)
            if idx.size:
                Xa = X[idx]
                S = np.asarray(fields.sigma(Xa), dtype=float).reshape(idx.size, d, d)
                B = np.asarray(fields.b(Xa), dtype=float).reshape(idx.size, d)
                ok = np.isfinite(S).all(axis=(1, 2)) & np.isfinite(B).all(axis=1)
                fm[idx] = np.maximum(fm[idx], np.where(ok, np.maximum(np.abs(S).max(axis=(1, 2)), np.abs(B).max(axis=1)), 0.0))
                Xn = Xa + (S * dW[idx, n, None, :]).sum(axis=-1) + B * dt
                ok &= np.isfinite(Xn).all(axis=1)
                r = np.sqrt((np.where(ok[:, None], Xn, 0.0) ** 2).sum(axis=-1))
                t_next = times[n + 1]
                for j, level in enumerate(thr):
                    newly = ok & (r >= level) & np.isinf(hit[idx, j])
                    hit[idx[newly], j] = t_next
                dies = ~ok | (r >= thr[-1])
                nonfin[idx[~ok]] = True
                Xn[dies] = np.inf
                death[idx[dies]] = t_next
                X[idx] = Xn
                alive[idx[dies]] = False
            if (n + 1) % record_every == 0:
                k = (n + 1) // record_every
                states[sl, k] = X
                alive_rec[sl, k] = alive
        hits[sl] = hit
        bad[sl] = nonfin
        fmax[sl] = fm
        death_all[sl] = death

    _map_chunks(work, m_all, workers)
    return PathResult(
        times[::record_every],
        states,
        alive_rec,
        tuple(thr.tolist()),
        hits,
        bad,
        dt,
        float(fmax.max()) if m_all else 0.0,
        death_all,
    )


def simulate(fields: Fields, x0, config: SimulationConfig, stream=(rng.BROWNIAN,), first_path: int = 0, record_every: int = 1):
    """Sample Brownian paths per ``config`` and run simulate_path on them."""
    bm = sample_brownian(config.T, config.dt, fields.d, config.seed, config.paths, first_path, stream, config.workers)
    return simulate_path(fields, x0, bm, config.thresholds, config.workers, record_every), bm


def strong_error(
    fields: Fields,
    x0,
    brownian: BrownianPath,
    dts: Sequence[float],
    ref_levels: int = 2,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> dict:
    """Mean over paths of max_t |X^dt_t - X^ref_t| for each dt, plus the fitted order.

    ``brownian`` must be sampled at dts[0]; each later dt must be the previous
    one divided by a power of two.  The reference solution runs ``ref_levels``
    bridge refinements below the finest dt on the same noise.  Paths that
    explode at any resolution are dropped.
    """
    dts = [float(v) for v in dts]
    if abs(dts[0] - brownian.dt) > 1e-15 * brownian.dt:
        raise ValueError("brownian must be sampled at the coarsest dt")
    levels = [0]
    for a, b in zip(dts, dts[1:]):
        k = math.log2(a / b)
        if b >= a or abs(k - round(k)) > 1e-9:
            raise ValueError("dts must be descending and each a power-of-two refinement of the previous")
        levels.append(levels[-1] + int(round(k)))
    ref_level = levels[-1] + ref_levels
    ref_path = refine_brownian(brownian, ref_level)
    ref = simulate_path(fields, x0, ref_path, thresholds)
    runs = []
    for dt, lev in zip(dts, levels):
        bm = brownian if lev == 0 else refine_brownian(brownian, lev)
        runs.append(simulate_path(fields, x0, bm, thresholds))
    keep = ~ref.exploded
    for r in runs:
        keep &= ~r.exploded
    rows = []
    for dt, lev, r in zip(dts, levels, runs):
        stride = 2 ** (ref_level - lev)
        diff = np.abs(r.states[keep] - ref.states[keep, ::stride]).max(axis=(1, 2))
        rows.append({"dt": dt, "error": float(diff.mean()) if diff.size else float("nan")})
    errs = np.array([r["error"] for r in rows])
    order = float(np.polyfit(np.log(dts), np.log(errs), 1)[0]) if len(rows) > 1 else float("nan")
    return {"table": rows, "order": order, "paths_used": int(keep.sum()), "reference_dt": dts[-1] / 2**ref_levels}
