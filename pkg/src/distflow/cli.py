"""Command line entry point: one subcommand per experiment kind.

    distflow <kind> --config run.toml [--seed S] [--paths P] [--dt DT]
                    [--workers W] [--out DIR]
    distflow verify [--level quick|full] [--seed S] [--workers W] [--out DIR]

Results go to <out>/<name>/<timestamp>/ as summary.json, series.csv and
config.resolved.  Exit codes: 0 ok, 2 config error, 3 hypothesis violation,
4 acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from .config import KINDS, ConfigError, ExperimentConfig, load_config
from .evolution import HypothesisViolation, estimate_kernel, estimate_psi, evolution_residual, forward_residual
from .flow import conservation_check, evolve_flow, flow_csv, translation_invariance_check, uniqueness_check
from .hermite import TruncationScheme
from .monotonicity import estimate_constant
from .sde import refine_brownian, sample_brownian
from .sobolev import classify_dirac_growth, derivative_boundedness_probe, dirac_partial_sums

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_ACCEPTANCE = 0, 2, 3, 4


def _clean(obj):
    """Recursively convert numpy values for JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# ------------------------------------------------------------------ runners

def run_flow(cfg: ExperimentConfig):
    y, coeffs, tests = cfg.distribution(), cfg.coefficients(), cfg.test_functions()
    bm = sample_brownian(cfg.T, cfg.dt, cfg.d, cfg.seed, cfg.paths, workers=cfg.workers)
    fl = evolve_flow(y, coeffs, bm, cfg.thresholds, workers=cfg.workers)
    final = fl.z.states[:, -1]
    summary = {
        "final_z": final,
        "max_displacement": float(np.abs(np.where(fl.alive[..., None], fl.z.states, 0.0)).max()),
        "exploded": int(fl.z.exploded.sum()),
        "eta": fl.z.eta,
        "field_max": fl.z.field_max,
    }
    try:
        cons = conservation_check(fl)
        summary["conservation"] = {"mass": cons["mass"], "max_error": cons["max_error"], "pass": cons["max_error"] <= 1e-8}
    except (TypeError, ValueError, NotImplementedError) as exc:
        summary["conservation"] = {"skipped": str(exc)}
    summary["translation_invariance"] = {str(x): translation_invariance_check(y, coeffs, x, bm, cfg.thresholds) for x in cfg.shifts}
    return summary, flow_csv(fl, tests)


def run_evolve(cfg: ExperimentConfig):
    y, coeffs = cfg.distribution(), cfg.coefficients()
    rep = estimate_psi(y, coeffs, cfg.t_grid, cfg.M, cfg.seed, cfg.N, cfg.dt, cfg.thresholds, cfg.bound, workers=cfg.workers)
    summary = rep.summary()
    if len(rep.times) >= 5:
        evolution_residual(rep, cfg.p)
        summary["residuals"] = rep.residuals
    rows = [[t] + list(psi) + list(se) for t, psi, se in zip(rep.times, rep.psi, rep.stderr)]
    n = rep.scheme.size
    return summary, _csv(["t"] + [f"psi_{i}" for i in range(n)] + [f"se_{i}" for i in range(n)], rows)


def run_kernel(cfg: ExperimentConfig):
    y, coeffs = cfg.distribution(), cfg.coefficients()
    ks = estimate_kernel(cfg.x0, y, coeffs, cfg.t_grid, cfg.M, cfg.seed, cfg.dt, cfg.thresholds, workers=cfg.workers)
    summary = {
        "kernels": [
            {
                "t": k.t,
                "alive_fraction": str(k.alive_fraction),
                "cemetery_mass": str(k.cemetery_mass),
                "mean": k.samples[k.alive].mean(axis=0) if k.alive.any() else None,
                "var": k.samples[k.alive].var(axis=0, ddof=1) if k.alive.sum() > 1 else None,
            }
            for k in ks
        ]
    }
    text = ks[0].to_csv() + "".join(k.to_csv().split("\n", 1)[1] for k in ks[1:])
    return summary, text


def run_forward(cfg: ExperimentConfig):
    y, coeffs = cfg.distribution(), cfg.coefficients()
    fr = forward_residual(cfg.x0, y, coeffs, cfg.t_grid, cfg.M, cfg.q, cfg.seed, cfg.dt, cfg.N, cfg.thresholds, cfg.bound, workers=cfg.workers)
    names = [r["name"] for r in fr["panel"][0]]
    rows = [[t] + [r["value"] for r in row] + [n] for t, row, n in zip(fr["times"], fr["panel"], fr["norm"])]
    return fr, _csv(["t"] + names + ["norm"], rows)


def run_monotonicity(cfg: ExperimentConfig):
    rep = estimate_constant(cfg.alpha, cfg.p, cfg.d, cfg.samples, TruncationScheme(cfg.d, cfg.N), cfg.seed)
    summary = json.loads(rep.to_json())
    return summary, _csv(["N", "C_hat"], rep.saturation_curve)


def run_probe(cfg: ExperimentConfig):
    probe = derivative_boundedness_probe(cfg.p, cfg.samples, TruncationScheme(cfg.d, cfg.N), seed=cfg.seed)
    summary = {"probe": probe}
    if cfg.q > 0:
        summary["dirac"] = classify_dirac_growth(cfg.q, cfg.d)
        ps = dirac_partial_sums(cfg.q, cfg.d, 100000)
        ns = np.unique(np.geomspace(1, len(ps) - 1, 60).astype(int))
        return summary, _csv(["n", "partial_sum"], [[int(n), ps[n]] for n in ns])
    return summary, _csv(["key", "value"], [[k, v] for k, v in probe.items()])


def run_uniqueness(cfg: ExperimentConfig):
    y, coeffs, tests = cfg.distribution(), cfg.coefficients(), cfg.test_functions()
    rows, summary = [], {"runs": []}
    base = sample_brownian(cfg.T, cfg.dt, cfg.d, cfg.seed, cfg.paths, workers=cfg.workers)
    for j in range(3):
        # one noise realisation, refined by bridge sampling
        bm = refine_brownian(base, j) if j else base
        dt = bm.dt
        u = uniqueness_check(y, coeffs, bm, tests, cfg.levels, cfg.thresholds)
        summary["runs"].append({k: v for k, v in u.items() if k != "per_path"})
        rows.append([dt, u["fine_dt"], u["max_difference"], u["mean_path_difference"]])
    d = np.array([r[3] for r in rows])
    dts = np.array([r[0] for r in rows])
    summary["fitted_rate"] = float(np.polyfit(np.log(dts), np.log(d), 1)[0]) if np.all(d > 0) else None
    return summary, _csv(["dt", "fine_dt", "max_difference", "mean_path_difference"], rows)


RUNNERS = {
    "flow": run_flow,
    "evolve": run_evolve,
    "kernel": run_kernel,
    "forward": run_forward,
    "monotonicity": run_monotonicity,
    "sobolev-probe": run_probe,
    "uniqueness": run_uniqueness,
}


def write_outputs(root: str, name: str, summary: dict, series: str, resolved: dict) -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    path = os.path.join(root, name, stamp)
    os.makedirs(path, exist_ok=False)
    with open(os.path.join(path, "summary.json"), "w") as fh:
        fh.write(dumps(summary))
    with open(os.path.join(path, "series.csv"), "w") as fh:
        fh.write(series)
    with open(os.path.join(path, "config.resolved"), "w") as fh:
        fh.write(dumps(resolved))
    return path


def run(cfg: ExperimentConfig, write: bool = True) -> tuple[dict, str, str | None]:
    """Run one experiment; the summary echoes the resolved config."""
    summary, series = RUNNERS[cfg.kind](cfg)
    summary = {"config": cfg.resolved(), "result": summary}
    path = write_outputs(cfg.out, cfg.name, summary, series, cfg.resolved()) if write else None
    return summary, series, path


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distflow", description="Experiments for translation-driven S'-valued diffusions.")
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--paths", type=int)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out")
    vp = sub.add_parser("verify")
    vp.add_argument("--level", choices=("quick", "full"), default="quick")
    vp.add_argument("--seed", type=int, default=0)
    vp.add_argument("--workers", type=int, default=1)
    vp.add_argument("--out")
    vp.add_argument("--only", type=int, nargs="*")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "verify":
        from .verify import run_suite

        results = run_suite(args.level, args.workers, args.seed, args.only, echo=print)
        failed = [r for r in results if not r.passed]
        for r in failed:
            print(f"failed {r.number} {r.name}: expected {r.expected}; observed {json.dumps(r.observed, sort_keys=True)}")
        if args.out:
            summary = {"level": args.level, "seed": args.seed, "criteria": [json.loads(r.summary()) for r in results]}
            series = _csv(["criterion", "passed"], [[r.number, int(r.passed)] for r in results])
            write_outputs(args.out, "verify", summary, series, {"level": args.level, "seed": args.seed, "workers": args.workers})
        return EXIT_ACCEPTANCE if failed else EXIT_OK
    overrides = {"seed": args.seed, "paths": args.paths, "dt": args.dt, "workers": args.workers, "out": args.out}
    try:
        cfg = load_config(args.config, overrides)
        if cfg.kind != args.command:
            raise ConfigError("kind", f"config declares {cfg.kind!r} but subcommand is {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary, _, path = run(cfg)
    except HypothesisViolation as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
