"""Command line front end: single runs, alpha sweeps, oracle self-checks.

Configuration can come from a YAML file, from flags, or both; explicit
flags override file values.  Exit status is zero for completed runs
(including budget-terminated ones) and nonzero when the solver aborted
or a self-check failed.
"""

import argparse
import sys

import numpy as np
import yaml

from .driver import ContinuationSettings
from .experiments import (
    DIFFUSION_ALPHAS,
    POTENTIAL_ALPHAS,
    ExperimentConfig,
    run_experiment,
    run_sweep,
)
from .penalty import (
    MultibangConfig,
    envelope_eval,
    g0_eval,
    l1_h_eval,
    l1_hstar_eval,
    oracle_prox,
    prox_point,
    transition_bands,
)

_SETTINGS_KEYS = ("gamma0", "gamma_min", "max_newton", "min_step",
                  "max_backtracks", "inner_tol_rel", "inner_tol_abs")


def _add_run_flags(p, sweep=False):
    p.add_argument("--config", metavar="FILE",
                   help="YAML file with the same keys as the flags")
    p.add_argument("--problem", choices=("potential", "diffusion"))
    if sweep:
        p.add_argument("--alpha", help="comma-separated list of alpha values")
    else:
        p.add_argument("--alpha", type=float)
    p.add_argument("--grid", type=int, help="nodes per side (default 128)")
    p.add_argument("--gamma0", type=float)
    p.add_argument("--gamma-min", dest="gamma_min", type=float)
    p.add_argument("--max-newton", dest="max_newton", type=int)
    p.add_argument("--out", metavar="DIR", help="artifact directory")
    p.add_argument("--threshold", choices=("nearest", "subdiff", "none"))


def _merge(args):
    merged = {}
    if args.config:
        with open(args.config) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise SystemExit("config file must hold a mapping")
        merged.update(data)
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None:
            continue
        merged[key] = value
    return merged


def _settings_from(merged):
    kwargs = {}
    for key in _SETTINGS_KEYS:
        if key in merged:
            name = "max_total_newton" if key == "max_newton" else key
            kwargs[name] = merged[key]
    return ContinuationSettings(**kwargs)


def _config_from(merged, alpha):
    values = merged.get("values")
    return ExperimentConfig(
        problem=merged.get("problem", "potential"),
        n=int(merged.get("grid", 128)),
        alpha=float(alpha),
        beta=merged.get("beta"),
        values=None if values is None else tuple(values),
        settings=_settings_from(merged),
        out_dir=merged.get("out"),
        threshold=merged.get("threshold", "none"),
        smoothing_mode=merged.get("smoothing_mode", "renormalized"),
    )


def _cmd_solve(args):
    merged = _merge(args)
    problem = merged.get("problem", "potential")
    alpha = merged.get("alpha")
    if alpha is None:
        alpha = POTENTIAL_ALPHAS[0] if problem == "potential" else DIFFUSION_ALPHAS[0]
    config = _config_from(merged, alpha)
    report, metrics = run_experiment(config)
    print("reason=%s newton_total=%d e_T=%.6e e_M=%.6e"
          % (report.reason, report.newton_total, metrics.e_T, metrics.e_M))
    return 0 if report.reason in ("gamma_min", "max_newton") else 2


def _cmd_sweep(args):
    merged = _merge(args)
    problem = merged.get("problem", "potential")
    alphas = merged.get("alpha")
    if alphas is None:
        alphas = POTENTIAL_ALPHAS if problem == "potential" else DIFFUSION_ALPHAS
    elif isinstance(alphas, str):
        alphas = tuple(float(a) for a in alphas.split(","))
    else:
        alphas = tuple(float(a) for a in np.atleast_1d(alphas))
    config = _config_from(merged, alphas[0])
    results = run_sweep(config, alphas)
    status = 0
    for alpha, report, metrics in results:
        print("alpha=%.3e reason=%s newton_total=%d e_T=%.6e e_M=%.6e"
              % (alpha, report.reason, report.newton_total,
                 metrics.e_T, metrics.e_M))
        if report.reason not in ("gamma_min", "max_newton"):
            status = 2
    return status


def _hull_oracle(cfg, queries):
    # lower convex hull of sampled penalty values, linearly interpolated
    vals = cfg.value_array()
    xs = np.unique(np.concatenate([np.linspace(vals[0], vals[-1], 20001), vals]))
    ys = g0_eval(cfg, xs)
    hx, hy = [xs[0]], [ys[0]]
    for x, y in zip(xs[1:], ys[1:]):
        while len(hx) >= 2 and ((hx[-1] - hx[-2]) * (y - hy[-2])
                                <= (x - hx[-2]) * (hy[-1] - hy[-2])):
            hx.pop()
            hy.pop()
        hx.append(x)
        hy.append(y)
    return np.interp(queries, hx, hy)


def _cmd_oracle_check(args):
    rng = np.random.default_rng(0)
    n = args.samples
    failures = 0

    def verdict(label, worst, tol):
        nonlocal failures
        ok = worst <= tol
        failures += 0 if ok else 1
        print("%s %s: worst deviation %.3e (tolerance %.0e)"
              % ("PASS" if ok else "FAIL", label, worst, tol))

    for values in ((1.0, 2.0), (1.0, 1.5, 2.0, 2.5)):
        cfg = MultibangConfig(values, 1.0)
        top = 3.0 * cfg.alpha * values[-1]
        worst = 0.0
        for gamma in (1.0, 1e-3, 1e-6):
            bands = transition_bands(cfg, gamma)
            ps = rng.uniform(-top, top, size=n)
            got = np.array([prox_point(cfg, bands, p) for p in ps])
            worst = max(worst, float(np.max(np.abs(got - oracle_prox(cfg, gamma, ps)))))
        verdict("prox vs oracle, values %s" % (values,), worst, 1e-8)

    cfg = MultibangConfig((1.0, 1.5, 2.0, 2.5), 2.0)
    qs = rng.uniform(1.0, 2.5, size=n)
    verdict("envelope vs hull oracle",
            float(np.max(np.abs(envelope_eval(cfg, qs) - _hull_oracle(cfg, qs)))),
            1e-8)

    for values in ((1.0, 2.0), (1.0, 2.0, 3.0), (0.5, 1.0, 2.0, 2.75, 3.5)):
        cfg = MultibangConfig(values, 0.5)
        vals = cfg.value_array()
        xs = np.unique(np.concatenate(
            [np.linspace(vals[0], vals[-1], 10001), vals]))
        hs = l1_h_eval(cfg, xs)
        worst = 0.0
        for q in rng.uniform(-4.0, 4.0, size=max(200, n // 50)):
            worst = max(worst, abs(l1_hstar_eval(cfg, q) - np.max(q * xs - hs)))
        verdict("l1 conjugate vs grid oracle, d=%d" % len(values), worst, 1e-8)

    return 1 if failures else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="multibang",
        description="multi-material topology optimization solver")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run one experiment")
    _add_run_flags(solve)
    solve.set_defaults(func=_cmd_solve)

    sweep = sub.add_parser("sweep", help="run a sweep over alpha values")
    _add_run_flags(sweep, sweep=True)
    sweep.set_defaults(func=_cmd_sweep)

    oracle = sub.add_parser("oracle-check",
                            help="compare fast kernels against slow oracles")
    oracle.add_argument("--samples", type=int, default=20000)
    oracle.set_defaults(func=_cmd_oracle_check)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
