"""Command-line entry point: ``cafcor {calibrate,run,aggregate-bench,caf-trace}``.

Exit codes: 0 success, 2 infeasible privacy request, 64 usage error,
65 bad input data or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from cafcor import aggregation, privacy, synthetic
from cafcor import config as config_mod
from cafcor.errors import (
    CafcorError,
    ConfigError,
    IdxFormatError,
    InfeasibleNoiseError,
    InfeasibleRegimeError,
)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_USAGE = 64
EXIT_DATA = 65


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_calibrate(sub) -> None:
    p = sub.add_parser("calibrate", help="smallest noise meeting a privacy target")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--C", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--f", type=int, required=True)
    p.add_argument("--q", type=int, default=None, help="colluding workers (default: f)")
    p.add_argument("--regime", choices=privacy.REGIMES, default="equal")
    p.add_argument("--level", choices=privacy.ACCOUNTING_LEVELS, default="user")
    p.add_argument("--batch-size", type=int, default=1, help="mini-batch size for example-level accounting")
    p.add_argument("--units", choices=("variance", "std"), default="variance", help="units of the report")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; calibration is deterministic")
    p.set_defaults(handler=cmd_calibrate)


def _add_run(sub) -> None:
    p = sub.add_parser("run", help="run a training simulation from a config file")
    p.add_argument("config", help="flat key = value or JSON config file")
    p.add_argument("--output", "-o", help="CSV path (default: config 'output' key, else stdout)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(handler=cmd_run)


def _add_bench(sub) -> None:
    p = sub.add_parser("aggregate-bench", help="compare aggregators on synthetic batches")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--f", type=int, default=3)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--honest", choices=synthetic.HONEST_KINDS, default="gaussian")
    p.add_argument("--adversary", choices=synthetic.ADVERSARY_KINDS, default="shift")
    p.add_argument("--aggregators", default=",".join(aggregation.AGGREGATORS))
    p.add_argument("--mode", choices=("exact", "power"), default="exact")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_bench)


def _add_trace(sub) -> None:
    p = sub.add_parser("caf-trace", help="dump the filter state per iteration as JSON lines")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="batch file: .npy, or text with one vector per line")
    src.add_argument("--n", type=int, default=None, help="size of a synthetic batch")
    p.add_argument("--f", type=int, required=True)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--adversary", choices=synthetic.ADVERSARY_KINDS, default="shift")
    p.add_argument("--mode", choices=("exact", "power"), default="exact")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_trace)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cafcor", description="Robust and private distributed learning toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_calibrate(sub)
    _add_run(sub)
    _add_bench(sub)
    _add_trace(sub)
    return parser


# ------------------------------------------------------------------ handlers


def cmd_calibrate(args) -> int:
    q = args.f if args.q is None else args.q
    params = privacy.PrivacyParams(
        delta=args.delta,
        T=args.T,
        C=args.C,
        n=args.n,
        f=args.f,
        q=q,
        epsilon=args.epsilon,
        level=args.level,
        batch_size=args.batch_size,
    )
    a = privacy.calibrate(params, args.regime)
    # The equal regime is calibrated against full collusion.
    checked = params if args.regime == "no_independent" else replace(params, q=args.f)
    lhs, rhs = privacy.noise_condition_sides(checked, a)
    eps_star, alpha_star = privacy.secldp_epsilon(checked, a)
    report = {
        "regime": a.regime,
        "level": params.level,
        "n": params.n,
        "f": params.f,
        "q": checked.q,
        "T": params.T,
        "C": params.C,
        "delta": params.delta,
        "epsilon_target": params.epsilon,
        "noise_condition_lhs": lhs,
        "noise_condition_rhs": rhs,
        "noise_condition_holds": lhs >= rhs,
        "epsilon_star": eps_star,
        "alpha_star": alpha_star,
    }
    if args.units == "std":
        report["sigma_cor"] = a.sigma_cor_sq**0.5
        report["sigma_ind"] = a.sigma_ind_sq**0.5
    for key, value in report.items():
        print(f"{key}: {_show(value)}")
    print(f"sigma_cor_sq={a.sigma_cor_sq!r} sigma_ind_sq={a.sigma_ind_sq!r}")
    return EXIT_OK


def cmd_run(args) -> int:
    from cafcor.training.simulator import run

    path = Path(args.config)
    if not path.is_file():
        raise ConfigError("config", f"cannot read {path}")
    cfg = config_mod.load(path)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        data = config_mod.to_flat(cfg)
        data.update(overrides)
        cfg = config_mod.from_flat(data)
    text = run(cfg).to_csv()
    output = args.output or cfg.output
    if output:
        Path(output).write_text(text, newline="\n")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    aggregation.check_f(args.n, args.f)
    names = [s.strip() for s in args.aggregators.split(",") if s.strip()]
    unknown = [s for s in names if s not in aggregation.AGGREGATORS]
    if unknown:
        raise UsageError(f"unknown aggregators: {', '.join(unknown)}")
    rng = np.random.default_rng(args.seed)
    stats = {name: {"err": [], "excess": [], "holds": 0} for name in names}
    for _ in range(args.trials):
        sb = synthetic.make_batch(rng, args.n, args.f, args.d, args.honest, args.adversary, shuffle=True)
        slack = 4.0 if args.mode == "power" else 1.0
        for name in names:
            out = aggregation.aggregate(name, sb.batch, sb.f, args.mode, np.random.default_rng(args.seed))
            cert = aggregation.certify(sb.batch, sb.honest_indices, out, slack)
            stats[name]["err"].append(cert.lhs)
            stats[name]["excess"].append(cert.lhs - cert.rhs)
            stats[name]["holds"] += cert.holds
    print(f"# n={args.n} f={args.f} d={args.d} trials={args.trials} honest={args.honest} adversary={args.adversary}")
    # lhs is the squared distance to the honest mean; excess is lhs minus the bound.
    print(f"{'aggregator':<10} {'holds':>7} {'median_lhs':>14} {'max_excess':>14} certificate")
    for name in names:
        err = np.array(stats[name]["err"])
        holds = stats[name]["holds"]
        verdict = "holds" if holds == args.trials else "violated"
        excess = max(stats[name]["excess"])
        print(f"{name:<10} {holds:>3}/{args.trials:<3} {np.median(err):>14.6g} {excess:>14.6g} {verdict}")
    return EXIT_OK


def _load_batch(path: str) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise IdxFormatError(f"cannot read {p}")
    try:
        if p.suffix == ".npy":
            return np.load(p, allow_pickle=False)
        return np.loadtxt(p, ndmin=2, delimiter=None)
    except ValueError as exc:
        raise IdxFormatError(f"{p}: {exc}") from None


def cmd_trace(args) -> int:
    if args.input:
        batch = _load_batch(args.input)
    else:
        n = args.n if args.n is not None else 2 * args.f + 3
        rng = np.random.default_rng(args.seed)
        batch = synthetic.make_batch(rng, n, args.f, args.d, "gaussian", args.adversary).batch
    result = aggregation.caf_run(batch, args.f, args.mode, np.random.default_rng(args.seed), keep_history=True)
    for state in result.history:
        print(json.dumps(state.to_json()))
    print(json.dumps({"output": result.output.tolist(), "iterations": result.state.iterations_used}))
    return EXIT_OK


def _show(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleRegimeError, InfeasibleNoiseError) as exc:
        print(f"cafcor: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, IdxFormatError, OSError) as exc:
        print(f"cafcor: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CafcorError as exc:
        print(f"cafcor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
