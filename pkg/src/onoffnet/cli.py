"""Command-line front end: ``onoffnet {validate,analyze,simulate,rbm,compare} CONFIG``.

Exit status is 0 on success, 1 when the network fails validation or a
precondition is violated, and 2 on runtime errors. Every file written starts
with a comment line carrying the config hash and the root seed.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, model, seeding, verify
from .coupling import unsupported_reason
from .desim import simulate
from .rbm import ReflectedPath, reflect, sample_brownian


class PreconditionError(Exception):
    pass


def _header(cmd: str, spec: model.NetworkSpec, seed) -> str:
    s = "none" if seed is None else str(seed)
    return f"# onoffnet {cmd} config_hash={spec.digest()} root_seed={s}\n"


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _load(args) -> model.NetworkSpec:
    return model.load(args.config)


def _require_valid(spec) -> None:
    rep = model.validate(spec)
    if not rep.ok:
        raise PreconditionError("network failed validation:\n" + str(rep))


def cmd_validate(args) -> int:
    spec = _load(args)
    rep = model.validate(spec)
    print(rep)
    _write(args.out, "validation.txt", _header("validate", spec, None) + str(rep) + "\n")
    return 0 if rep.ok else 1


def cmd_analyze(args) -> int:
    spec = _load(args)
    _require_valid(spec)
    envd, traffic, params = analysis.analyze(spec)
    tables = analysis.format_tables(spec, envd, traffic, params)
    table_csv = analysis.to_csv(spec, envd, traffic, params)
    print(tables)
    print(table_csv, end="")
    head = _header("analyze", spec, None)
    _write(args.out, "analysis.txt", head + tables)
    _write(args.out, "analysis.csv", head + table_csv)
    return 0


def _sim_one(spec, horizon, sample_dt, seed):
    return simulate(spec, horizon, sample_dt, seed)


def cmd_simulate(args) -> int:
    spec = _load(args)
    _require_valid(spec)
    if not args.horizon > 0:
        raise PreconditionError(f"--horizon must be positive, got {args.horizon}")
    if not args.sample_dt > 0:
        raise PreconditionError(f"--sample-dt must be positive, got {args.sample_dt}")
    if args.reps < 1:
        raise PreconditionError("--reps must be positive")
    envd, traffic, _ = analysis.analyze(spec)
    jobs = [(spec, args.horizon, args.sample_dt, seeding.seed_sequence(args.seed, i))
            for i in range(args.reps)]
    paths = verify.run_replications(_sim_one, jobs, args.threads)
    head = _header("simulate", spec, args.seed)
    summary = [head.rstrip("\n")]
    for i, p in enumerate(paths):
        _write(args.out, f"simpath_rep{i}.csv", head + p.to_csv())
        summary.append(f"replication {i}: Q(T)={p.Q[-1].tolist()} completions={p.completions[-1].tolist()} "
                       f"time-average Q={np.round(p.time_average_queue(), 6).tolist()}")
        summary.append(verify.format_lln(verify.lln_checks(p, envd, spec, traffic)).rstrip("\n"))
    text = "\n".join(summary) + "\n"
    print(text, end="")
    _write(args.out, "simulate_summary.txt", text)
    return 0


def cmd_rbm(args) -> int:
    spec = _load(args)
    _require_valid(spec)
    if not args.horizon > 0 or not args.dt > 0:
        raise PreconditionError("--horizon and --dt must be positive")
    _, _, params = analysis.analyze(spec)
    n = int(round(args.horizon / args.dt))
    head = _header("rbm", spec, args.seed)
    w0 = np.asarray(spec.initial_queue, dtype=float)
    lines = [head.rstrip("\n")]
    for i in range(args.paths):
        path = sample_brownian(params.drift, params.cov, w0, n, args.dt,
                               seeding.rng(args.seed, i, seeding.RBM))
        refl: ReflectedPath = reflect(path, spec.routing)
        _write(args.out, f"rbm_path{i}.csv", head + refl.to_csv())
        lines.append(f"path {i}: Z(T)={np.round(refl.Z[-1], 6).tolist()} Y(T)={np.round(refl.Y[-1], 6).tolist()}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    _write(args.out, "rbm_summary.txt", text)
    return 0


def cmd_compare(args) -> int:
    spec = _load(args)
    _require_valid(spec)
    if args.reps < 1 or not args.T > 0 or any(n <= 0 for n in args.scales):
        raise PreconditionError("--reps, --T and --scales must be positive")
    if args.rate_horizons:
        h = np.asarray(args.rate_horizons, dtype=float)
        if h.size < 4 or (h <= 0).any() or np.log10(h.max() / h.min()) < 2 - 1e-12:
            raise PreconditionError("--rate-horizons needs at least 4 positive horizons spanning two decades")
        reason = unsupported_reason(spec)
        if reason is not None:
            raise PreconditionError(f"rate diagnostic unavailable: {reason}")
    report = verify.scaled_compare(spec, args.T, args.scales, args.reps, args.seed,
                                   rbm_dt=args.rbm_dt, coupled_reps=args.coupled_reps,
                                   threads=args.threads)
    head = _header("compare", spec, args.seed)
    text = head + report.summary()
    if args.rate_horizons:
        sups = verify.coupled_sup_distances(spec, args.rate_horizons, args.coupled_reps, args.seed,
                                            threads=args.threads)
        mean = sups.mean(axis=0)
        diag = verify.rate_diagnostic(args.rate_horizons, mean, args.p)
        text += (f"rate diagnostic: horizons={args.rate_horizons} mean sup-distance="
                 f"{np.round(mean, 6).tolist()} slope={diag.slope:.4f} "
                 f"threshold={diag.threshold:.4f} {'PASS' if diag.passed else 'FAIL'}\n")
    print(text, end="")
    _write(args.out, "compare.csv", head + report.to_csv())
    _write(args.out, "compare_summary.txt", text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onoffnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("config", help="network configuration (YAML)")
        p.add_argument("--out", type=Path, default=None, help="directory for output files")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
            p.add_argument("--threads", type=int, default=verify.default_threads(),
                           help="worker processes for replications (default: CPU count)")

    common(sub.add_parser("validate", help="check structural assumptions"), seed=False)
    common(sub.add_parser("analyze", help="traffic equations and RBM parameters"), seed=False)

    p = sub.add_parser("simulate", help="event-driven simulation")
    common(p)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--sample-dt", type=float, default=1.0)
    p.add_argument("--reps", type=int, default=1)

    p = sub.add_parser("rbm", help="sample reflected Brownian motion paths")
    common(p)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--dt", type=float, default=1e-2)
    p.add_argument("--paths", type=int, default=1)

    p = sub.add_parser("compare", help="diffusion-scaled comparison with the RBM")
    common(p)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--scales", type=float, nargs="+", default=[100.0, 1000.0])
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--rbm-dt", type=float, default=1e-3)
    p.add_argument("--coupled-reps", type=int, default=5)
    p.add_argument("--rate-horizons", type=float, nargs="*", default=None)
    p.add_argument("--p", type=float, default=float("inf"),
                   help="moment order of the primitives (default: all moments finite)")
    return parser


COMMANDS = {
    "validate": cmd_validate,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "rbm": cmd_rbm,
    "compare": cmd_compare,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
