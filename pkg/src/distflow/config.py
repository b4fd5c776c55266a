"""Experiment configuration: TOML files with a fixed schema, flags on top.

Schema (all keys optional unless noted; unknown keys are rejected):

    kind        flow | evolve | kernel | forward | monotonicity
                | sobolev-probe | uniqueness             (required)
    name        experiment name, default = kind
    seed        int >= 0                                   default 0
    d           1, 2 or 3                                  default 1
    dt, T       positive floats                            default 1e-3, 1.0
    paths       Brownian paths for flow / uniqueness       default 4
    M           Monte Carlo paths for evolve / kernel / forward, default 1000
    workers     int >= 1                                   default 1
    thresholds  increasing positive floats                 default [10, 1e2, 1e3, 1e4]
    N, p, q     truncation degree, Sobolev index, forward index q > d/4
    alpha, samples              monotonicity / probe sampling
    t_grid      list of times (multiples of dt); default 11 points on [0, T]
    x0          start point for kernel / forward           default 0
    shifts      translations for the flow's invariance check
    levels      bridge refinements for uniqueness          default 2
    bound       declared sup of the fields (runtime monitor)
    out         output root                                default "out"
    y           distribution spec (see distribution_from_config)
    sigma       d x d nested list of distribution specs or numbers
    b           list of d distribution specs or numbers
    tests       list of distribution specs used as observables
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .distribution import CoefficientMatrix, distribution_from_config
from .sde import DEFAULT_THRESHOLDS

KINDS = ("flow", "evolve", "kernel", "forward", "monotonicity", "sobolev-probe", "uniqueness")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    kind: str
    name: str = ""
    seed: int = 0
    d: int = 1
    dt: float = 1e-3
    T: float = 1.0
    paths: int = 4
    M: int = 1000
    workers: int = 1
    thresholds: list = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    N: int = 12
    p: float = 0.0
    q: float = 0.0
    alpha: float = 1.0
    samples: int = 200
    t_grid: list = field(default_factory=list)
    x0: list = field(default_factory=list)
    shifts: list = field(default_factory=list)
    levels: int = 2
    bound: float | None = None
    out: str = "out"
    y: object = None
    sigma: object = None
    b: object = None
    tests: list = field(default_factory=list)

    def resolved(self) -> dict:
        """Every parameter after defaults, as plain JSON-able values."""
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.resolved(), sort_keys=True, indent=2)

    def distribution(self):
        return distribution_from_config(self.y, self.d)

    def coefficients(self) -> CoefficientMatrix:
        sig = [[distribution_from_config(e, self.d) for e in row] for row in self.sigma]
        bb = [distribution_from_config(e, self.d) for e in self.b]
        return CoefficientMatrix(tuple(map(tuple, sig)), tuple(bb))

    def test_functions(self):
        return [distribution_from_config(e, self.d) for e in self.tests]


_NAMES = {f.name for f in fields(ExperimentConfig)}


def _num(raw, key, cast=float, lo=None, strict=False):
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if cast is int and (not float(v).is_integer()):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    v = cast(v)
    if not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    if lo is not None and (v <= lo if strict else v < lo):
        raise ConfigError(key, f"must be {'>' if strict else '>='} {lo}")
    return v


def _float_list(raw, key, d=None):
    v = raw[key]
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in v):
        raise ConfigError(key, "expected a list of numbers")
    if d is not None and len(v) != d:
        raise ConfigError(key, f"expected {d} entries")
    return [float(e) for e in v]


def build_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a parsed mapping (plus flag overrides) into an ExperimentConfig."""
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    unknown = sorted(set(raw) - _NAMES)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    if "kind" not in raw:
        raise ConfigError("kind", "required")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ConfigError("kind", f"must be one of {', '.join(KINDS)}")
    cfg = ExperimentConfig(kind=kind)
    cfg.name = str(raw.get("name", kind))
    if not cfg.name or "/" in cfg.name or cfg.name.startswith("."):
        raise ConfigError("name", "must be a plain directory name")
    for key, cast, lo, strict in (
        ("seed", int, 0, False),
        ("d", int, 1, False),
        ("dt", float, 0, True),
        ("T", float, 0, True),
        ("paths", int, 1, False),
        ("M", int, 2, False),
        ("workers", int, 1, False),
        ("N", int, 0, False),
        ("p", float, None, False),
        ("q", float, None, False),
        ("alpha", float, 0, False),
        ("samples", int, 1, False),
        ("levels", int, 1, False),
    ):
        if key in raw:
            setattr(cfg, key, _num(raw, key, cast, lo, strict))
    if cfg.d > 3:
        raise ConfigError("d", "must be 1, 2 or 3")
    if "bound" in raw:
        cfg.bound = _num(raw, "bound", float, 0, True)
    if "out" in raw:
        cfg.out = str(raw["out"])
    if "thresholds" in raw:
        th = _float_list(raw, "thresholds")
        if not th or th[0] <= 0 or any(b <= a for a, b in zip(th, th[1:])):
            raise ConfigError("thresholds", "must be a nonempty increasing list of positive numbers")
        cfg.thresholds = th
    steps = cfg.T / cfg.dt
    if abs(steps - round(steps)) > 1e-9 * max(steps, 1):
        raise ConfigError("dt", "T must be an integer multiple of dt")
    if "t_grid" in raw:
        cfg.t_grid = _float_list(raw, "t_grid")
        if not cfg.t_grid or any(t < 0 or t > cfg.T + 1e-12 for t in cfg.t_grid):
            raise ConfigError("t_grid", "times must lie in [0, T]")
        if any(b <= a for a, b in zip(cfg.t_grid, cfg.t_grid[1:])):
            raise ConfigError("t_grid", "times must be increasing")
        for t in cfg.t_grid:
            if abs(t / cfg.dt - round(t / cfg.dt)) > 1e-9 * max(t / cfg.dt, 1):
                raise ConfigError("t_grid", f"{t} is not a multiple of dt")
    else:
        cfg.t_grid = np.linspace(0.0, cfg.T, 11).tolist()
        cfg.t_grid = [round(t / cfg.dt) * cfg.dt for t in cfg.t_grid]
    cfg.x0 = _float_list(raw, "x0", cfg.d) if "x0" in raw else [0.0] * cfg.d
    if "shifts" in raw:
        cfg.shifts = _float_list(raw, "shifts")
    elif kind == "flow":
        cfg.shifts = [1.0, -1.0]

    needs_fields = kind in ("flow", "evolve", "kernel", "forward", "uniqueness")
    if kind == "forward":
        if "q" not in raw:
            cfg.q = 0.5 if cfg.d == 1 else 0.75 if cfg.d == 2 else 1.0
        if cfg.q <= cfg.d / 4:
            raise ConfigError("q", "q must exceed d/4")
    if kind == "monotonicity" and cfg.samples < 100:
        raise ConfigError("samples", "must be >= 100")
    if needs_fields:
        cfg.y = raw.get("y", {"variant": "gaussian", "mean": [0.0] * cfg.d, "var": 1.0})
        cfg.sigma = raw.get("sigma", [[0.0] * cfg.d for _ in range(cfg.d)])
        cfg.b = raw.get("b", [0.0] * cfg.d)
        cfg.tests = raw.get("tests", [{"variant": "gaussian", "mean": [0.0] * cfg.d, "var": 1.0}])
        if not isinstance(cfg.sigma, list) or len(cfg.sigma) != cfg.d or any(not isinstance(r, list) or len(r) != cfg.d for r in cfg.sigma):
            raise ConfigError("sigma", f"expected a {cfg.d} x {cfg.d} nested list")
        if not isinstance(cfg.b, list) or len(cfg.b) != cfg.d:
            raise ConfigError("b", f"expected a list of {cfg.d} entries")
        if not isinstance(cfg.tests, list):
            raise ConfigError("tests", "expected a list")
        for key, build in (("y", cfg.distribution), ("sigma", cfg.coefficients), ("tests", cfg.test_functions)):
            try:
                build()
            except (ValueError, TypeError, KeyError, SyntaxError, NameError) as exc:
                raise ConfigError(key, str(exc)) from exc
    else:
        for key in ("y", "sigma", "b", "tests"):
            if key in raw:
                raise ConfigError(key, f"not used by kind {kind}")
    return cfg


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"TOML syntax: {exc}") from exc
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from exc
    return build_config(raw, overrides)
