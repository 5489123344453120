"""Command line entry point: ``solve | continue | verify | simulate | smoothing``.

Exit codes: 0 success, 1 failed checks, 2 non-convergence, 3 invalid config.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import build_objects, load_config
from .errors import ConfigError, ConvergenceError, SmoothingHypothesisError
from .hjb_solver import HJBProblem
from .lifting import build_lifted, default_fit_times, fit_smoothing_exponent, smoothing_profile
from .simulate import Policy, evaluate_policy_cost
from .verification import ALL_CHECKS, run_all

log = logging.getLogger("mildhjb")

EXIT_OK, EXIT_CHECKS, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2, 3


def _versions():
    return {"mildhjb": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")
    return str(path)


def _plain(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def write_value_csv(v, path):
    """Columns ``x_1..x_n, v, g_1..g_dU`` with round-trip float formatting."""
    nodes = v.nodes()
    cols = [nodes, v.values.reshape(-1, 1)]
    header = [f"x_{k + 1}" for k in range(nodes.shape[1])] + ["v"]
    if v.gradient_values is not None:
        g = v.gradient_values.reshape(len(nodes), -1)
        cols.append(g)
        header += [f"g_{k + 1}" for k in range(g.shape[1])]
    np.savetxt(path, np.hstack(cols), fmt="%.17g", delimiter=",", header=",".join(header),
               comments="")
    return str(path)


def _prefix(args):
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    return prefix


def _artifact(prefix, suffix):
    return prefix.with_name(prefix.name + suffix)


def _load(args):
    config = load_config(args.config)
    overrides = {"lam": getattr(args, "lam", None), "max_iter": args.max_iter}
    if args.tol is not None:
        overrides.update(tau_pic=args.tol, tau_out=args.tol)
    solver = {("lambda" if k == "lam" else k): v for k, v in overrides.items() if v is not None}
    config = config.with_overrides(seed=args.seed, **solver)
    return config, build_objects(config)


def _summary(config, problem, lam, v, trace, nu=None):
    fit = problem.fit
    lam0 = problem.lambda0()
    return {
        "lambda": lam,
        "lambda0": lam0,
        "nu": nu,
        "iterations": trace.iterations,
        "ratios": trace.ratios,
        "observed_ratio": trace.observed_ratio(),
        "residual": v.meta.get("residual"),
        "error_budget": v.meta.get("error_budget"),
        "contraction_bound": problem.contraction_bound(lam) if problem.spec.lipschitz else 0.0,
        "gradient_constant": v.meta.get("gradient_constant"),
        "smoothing_fit": fit.to_dict(),
        "trace": trace.to_dict(),
        "config_digest": config.digest,
        "seed": config.seed,
        "versions": _versions(),
    }


def _solve(args, continuation):
    config, (model, cost, spec, cfg) = _load(args)
    problem = HJBProblem(model, cost, spec, cfg)
    lam = cfg.lam
    if continuation:
        v, trace = problem.continuation(lam)
        nu = v.meta["nu"]
    else:
        v, trace = problem.picard(lam)
        v.meta["residual"] = problem.residual(v, lam)
        nu = None
    prefix = _prefix(args)
    name = "continue" if continuation else "solve"
    out = [write_value_csv(v, _artifact(prefix, "_value.csv")),
           _write_json(_artifact(prefix, "_summary.json"),
                       _summary(config, problem, lam, v, trace, nu))]
    if args.plot:
        from .plotting import plot_convergence, plot_value
        out.append(plot_value(v, _artifact(prefix, "_value.png"), f"{name}, lambda={lam:g}"))
        out.append(plot_convergence(trace, _artifact(prefix, "_convergence.png"), name))
    print(f"{name}: lambda={lam:g} iterations={trace.iterations} "
          f"residual={v.meta['residual']:.3e} budget={v.meta['error_budget']:.3e}")
    for path in out:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_solve(args):
    return _solve(args, continuation=False)


def cmd_continue(args):
    return _solve(args, continuation=True)


def cmd_verify(args):
    config, _ = _load(args)
    checks = args.checks.split(",") if args.checks else None
    reports = run_all(config, checks)
    prefix = _prefix(args)
    path = _write_json(_artifact(prefix, "_verify.json"),
                       {"reports": [r.to_dict() for r in reports], "config_digest": config.digest,
                        "seed": config.seed, "versions": _versions()})
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: defect={r.defect:.3e} tol={r.tolerance:.3e}")
    print(f"wrote {path}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECKS


def cmd_simulate(args):
    config, (model, cost, spec, cfg) = _load(args)
    sc = config.simulate
    lam = cfg.lam
    kinds = sc.get("policies", ["feedback", "zero"])
    v = None
    if any(k == "feedback" for k in kinds):
        problem = HJBProblem(model, cost, spec, cfg)
        if spec.lipschitz == 0 or lam >= problem.lambda0():
            v, _ = problem.picard(lam)
        else:
            v, _ = problem.continuation(lam)
    x0s = [np.atleast_1d(np.asarray(x, float)) for x in sc.get("x0", [[0.0] * model.n_proj])]
    rows = []
    for x0 in x0s:
        for kind in kinds:
            if kind == "feedback":
                policy = Policy.feedback(spec, v)
            elif kind == "zero":
                policy = Policy.zero(spec)
            else:
                policy = Policy.constant(np.atleast_1d(np.asarray(kind, float)), spec)
            est = evaluate_policy_cost(model, spec, cost, x0, policy, lam,
                                       dt=sc.get("dt", 0.01), T_h=sc.get("horizon"),
                                       n_paths=sc.get("n_paths", 10_000), seed=config.seed,
                                       target_ci=sc.get("target_ci", 0.01))
            value = float(v(model.project(x0) if x0.size == model.n_total else x0)) if v else None
            rows.append({"x0": x0.tolist(), "policy": policy.describe(), "value": value,
                         **est.to_dict()})
            print(f"x0={x0.tolist()} policy={policy.kind}{'' if policy.u0 is None else list(policy.u0)} "
                  f"cost={est.mean:.5f} +- {est.half_width:.5f}"
                  + ("" if value is None else f" v(x0)={value:.5f}"))
    prefix = _prefix(args)
    path = _write_json(_artifact(prefix, "_simulate.json"),
                       {"lambda": lam, "estimates": rows, "config_digest": config.digest,
                        "seed": config.seed, "versions": _versions()})
    print(f"wrote {path}")
    return EXIT_OK


def cmd_smoothing(args):
    config, (model, _, _, cfg) = _load(args)
    times = default_fit_times()
    lifted = build_lifted(model, eps_reg=cfg.eps_reg)
    finite, lifted_norms = smoothing_profile(model, times, lifted)
    fit = fit_smoothing_exponent(times, finite)
    prefix = _prefix(args)
    csv_path = _artifact(prefix, "_smoothing.csv")
    np.savetxt(csv_path, np.column_stack([times, finite, lifted_norms]), fmt="%.17g",
               delimiter=",", header="t,norm_lambda_finite,norm_lambda_lifted", comments="")
    out = [str(csv_path), _write_json(_artifact(prefix, "_smoothing_fit.json"), fit.to_dict())]
    if args.plot:
        from .plotting import plot_smoothing
        out.append(plot_smoothing(times, finite, lifted_norms, fit, _artifact(prefix, "_smoothing.png")))
    print(f"smoothing: kappa0={fit.kappa0:.5g} gamma={fit.gamma:.5f} residual={fit.residual:.3e} "
          f"status={fit.status}")
    for path in out:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mildhjb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "solve": (cmd_solve, "direct Picard solve at --lambda"),
        "continue": (cmd_continue, "resolvent continuation to --lambda"),
        "verify": (cmd_verify, "run the identity and bound checks"),
        "simulate": (cmd_simulate, "Monte Carlo cost of feedback and reference policies"),
        "smoothing": (cmd_smoothing, "smoothing-exponent profile and fit"),
    }
    for name, (func, help_) in commands.items():
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--lambda", dest="lam", type=float, help="discount factor")
        p.add_argument("--out-prefix", default="mildhjb_out/run", help="output path prefix")
        p.add_argument("--tol", type=float, help="Picard and outer tolerance")
        p.add_argument("--max-iter", type=int, help="Picard iteration limit")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--plot", action="store_true", help="also write PNG figures")
        if name == "verify":
            p.add_argument("--checks", help=f"comma-separated subset of {','.join(ALL_CHECKS)}")
    return parser


def run_cli(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SmoothingHypothesisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.trace is not None:
            print(f"last deltas: {exc.trace.deltas[-5:]}", file=sys.stderr)
        return EXIT_DIVERGED


def main():
    sys.exit(run_cli())
