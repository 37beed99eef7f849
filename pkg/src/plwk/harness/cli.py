"""Command line interface: ``plwk {run,compare,sweep,check,list-problems}``.

Exit codes: 0 success, 1 validation error, 2 runtime solve failure,
3 self-check failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

from ..core import ConfigError, PLWKError, SolverConfig, ThetaSchedule
from ..problems import get_problem, list_problems
from ..solver import METHODS
from .checks import self_check
from .experiment import ExperimentSpec, compare_methods, run_experiment, sweep_noise

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

# flag name -> (default, parser)
OPTIONS = {
    "problem": ("elliptic", str),
    "method": (None, str),
    "noise-percent": (None, str),
    "tau": (3.0, float),
    "eta": (0.45, float),
    "theta": ("1.0", str),
    "lambda-max": ("none", str),
    "seed": (0, int),
    "max-cycles": (500, int),
    "out-dir": ("runs", str),
    "param-norm": (None, str),
}


def _float_list(text: str) -> tuple:
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def load_config(path) -> tuple:
    """Read an INI file with a ``[plwk]`` section (flag names as keys) and an
    optional ``[problem]`` section of problem options."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    flags = {k.replace("_", "-"): v for k, v in cp["plwk"].items()} if cp.has_section("plwk") else {}
    unknown = set(flags) - set(OPTIONS)
    if unknown:
        raise ConfigError(f"unknown keys in [plwk]: {', '.join(sorted(unknown))}")
    problem = dict(cp["problem"]) if cp.has_section("problem") else {}
    return flags, problem


def resolve(args) -> dict:
    file_flags, problem_opts = load_config(args.config) if args.config else ({}, {})
    values = {}
    for name, (default, conv) in OPTIONS.items():
        v = getattr(args, name.replace("-", "_"), None)
        if v is None:
            v = file_flags.get(name, default)
        try:
            values[name] = None if v is None else conv(v)
        except ValueError:
            raise ConfigError(f"bad value for --{name}: {v!r}") from None
    if values["param-norm"] is not None:
        if values["problem"] != "elliptic":
            raise ConfigError("--param-norm applies to the elliptic problem only")
        problem_opts["param_norm"] = values["param-norm"]
    values["problem-options"] = problem_opts
    return values


def solver_config(v: dict) -> SolverConfig:
    lm = v["lambda-max"]
    lambda_max = None if str(lm).lower() == "none" else float(lm)
    return SolverConfig(eta=v["eta"], tau=v["tau"], theta=ThetaSchedule(_float_list(v["theta"])),
                        lambda_max=lambda_max, max_cycles=v["max-cycles"])


def _spec(v: dict, methods, noise) -> ExperimentSpec:
    return ExperimentSpec(problem=v["problem"], problem_options=v["problem-options"], methods=tuple(methods),
                          noise_percents=tuple(noise), solver=solver_config(v), out_dir=Path(v["out-dir"]),
                          seed=v["seed"])


def _summary(result) -> int:
    for (m, pct), rec in result.records.items():
        last = rec.cycles[-1]
        print(f"{m:6s} noise={pct:g}%  stop={rec.stop_reason:14s} k*={rec.stop_index}  "
              f"cycles={rec.cycles_executed}  error={last.error_ref:.6g}  "
              f"residual_sum={last.residual_sum:.6g}  pde_solves={last.cum_pde_solves}")
    for (m, pct), exc in result.failures.items():
        print(f"{m:6s} noise={pct:g}%  FAILED: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_RUNTIME if result.failures else EXIT_OK


def cmd_run(args) -> int:
    v = resolve(args)
    methods = _str_list(v["method"] or "PLWK")
    noise = _float_list(v["noise-percent"] or "2")
    if len(methods) != 1 or len(noise) != 1:
        raise ConfigError("run takes exactly one method and one noise level; use compare or sweep")
    return _summary(run_experiment(_spec(v, methods, noise)))


def cmd_compare(args) -> int:
    v = resolve(args)
    methods = _str_list(v["method"] or ",".join(METHODS))
    noise = _float_list(v["noise-percent"] or "2")
    out = compare_methods(_spec(v, methods, noise))
    return _summary(out["result"])


def cmd_sweep(args) -> int:
    v = resolve(args)
    methods = _str_list(v["method"] or "PLWK")
    noise = _float_list(v["noise-percent"] or "4,2,1,0.5")
    out = sweep_noise(_spec(v, methods, noise))
    for m, rows in out["tables"].items():
        print(f"{m}: noise%  k*  stop  error  skipped_fraction")
        for pct, k, reason, err, frac in rows:
            print(f"  {pct:g}  {k}  {reason}  {err:.6g}  {frac:.3f}")
    return EXIT_RUNTIME if out["result"].failures else EXIT_OK


def cmd_check(args) -> int:
    v = resolve(args)
    problem = get_problem(v["problem"], v["problem-options"])
    results = self_check(problem, seed=v["seed"], tcc_threshold=v["eta"])
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_list(args) -> int:
    for name, desc in list_problems().items():
        print(f"{name:10s} {desc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with a [plwk] section mirroring the flags and a [problem] section")
    common.add_argument("--problem", help="problem name (see list-problems)")
    common.add_argument("--method", help=f"one of {', '.join(METHODS)}; comma-separated for compare/sweep")
    common.add_argument("--noise-percent", help="relative noise in percent; comma-separated list for sweep")
    common.add_argument("--tau", type=float)
    common.add_argument("--eta", type=float)
    common.add_argument("--theta", help="relaxation parameter, or comma-separated periodic schedule")
    common.add_argument("--lambda-max", help="step truncation constant, or 'none'")
    common.add_argument("--seed", type=int, help="root seed for noise and index order")
    common.add_argument("--max-cycles", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--param-norm", choices=("l2", "h1"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="plwk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in [
        ("run", cmd_run, "single method at one noise level"),
        ("compare", cmd_compare, "several methods at one or more noise levels"),
        ("sweep", cmd_sweep, "stopping index and error across a noise ladder"),
        ("check", cmd_check, "adjoint, derivative and TCC self-checks"),
        ("list-problems", cmd_list, "list built-in problems"),
    ]:
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PLWKError as exc:
        print(f"solve failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
