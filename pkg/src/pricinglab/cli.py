"""Command-line entry point: one subcommand per experiment plus audit and rerun.

Every run writes report.json, its tables and transcripts, and a manifest.json
holding the resolved configuration, seeds, output checksums and wall time. The
exit code is 0 exactly when every claim check in the report passes.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import experiments as ex
from . import io as pio
from .stage_game import DomainError

MAX_WORK = 2 * 10**7  # T * k cap on dynamics without --allow-large
MAX_LP_K = 200       # grid-size cap on LP runs without --allow-large
EXIT_FAIL, EXIT_USAGE, EXIT_ERROR = 1, 2, 3


def _common(p: argparse.ArgumentParser, k: int, T: int | None = None):
    p.add_argument("--config", type=Path, help="JSON file of defaults; command-line flags override it")
    p.add_argument("--model", choices=["bertrand", "logit"], default="bertrand")
    p.add_argument("--tau", type=float, default=None, help="logit temperature (default 2k)")
    p.add_argument("--k", type=int, default=k)
    if T is not None:
        p.add_argument("--rounds", "-T", type=int, default=T)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--format", choices=["csv", "json"], default="csv", help="format of table outputs")
    p.add_argument("--allow-large", action="store_true", help="lift the T*k work cap")
    p.add_argument("--save-transcripts", choices=["auto", "yes", "no"], default="auto",
                   help="auto saves transcripts of runs with at most 1e5 rounds")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pricinglab", description="Repeated pricing duopoly experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stackelberg-sweep", help="Stackelberg values across grid sizes")
    _common(p, 20)
    p.add_argument("--k-min", type=int, default=20)
    p.add_argument("--k-max", type=int, default=200)
    p.add_argument("--step", type=int, default=10)
    p.add_argument("--ks", type=int, nargs="+", default=None, help="explicit list of grid sizes")
    p.add_argument("--exact", action="store_true", help="exact rational LP for k <= 50")
    p.add_argument("--rel-tol", type=float, default=0.02)

    p = sub.add_parser("stackelberg-strategy", help="Stackelberg commitment and follower tie band")
    _common(p, 100)
    p.add_argument("--tol", type=float, default=1e-7, help="tie-band tolerance")
    p.add_argument("--eps", type=float, default=1e-9, help="tie-break perturbation size")
    p.add_argument("--exact", action="store_true")

    p = sub.add_parser("uniform-bound", help="learner against a uniformly random seller")
    _common(p, 20, 100_000)
    p.add_argument("--learner", default="hedge", help="algorithm spec, e.g. hedge or kind=bm,eta=auto")

    p = sub.add_parser("equal-looting", help="learner payoff against an optimizer")
    _common(p, 100, 100_000)
    p.add_argument("--learner", default="hedge")
    p.add_argument("--optimizer", default="stackelberg", help="stackelberg, uniform or an algorithm spec")

    p = sub.add_parser("convergence", help="two algorithms playing each other")
    _common(p, 10, 1_000_000)
    p.add_argument("--alg-a", default="hedge")
    p.add_argument("--alg-b", default="hedge")
    p.add_argument("--thresholds", type=int, nargs="+", default=[2, 3, 4],
                   help="numerators i of the reported mass on prices >= i/k")
    p.add_argument("--points", type=int, default=1000, help="rounds sampled into the series CSV")

    p = sub.add_parser("threat", help="threat leader against scripted followers")
    _common(p, 20, 10_000)
    p.add_argument("--no-compliant", dest="compliant", action="store_false")
    p.add_argument("--deviate-at", type=int, nargs="*", default=None)

    p = sub.add_parser("nash", help="no-swap-regret learner against a near-Stackelberg optimizer")
    _common(p, 20)
    p.add_argument("--rounds-list", type=int, nargs="+", default=[10_000, 100_000, 1_000_000])
    p.add_argument("--c-eta", type=float, default=16.0, help="learner rate scale")
    p.add_argument("--c-delta", type=float, default=0.3, help="commitment margin scale")
    p.add_argument("--margin-exponent", type=float, default=0.25)

    p = sub.add_parser("audit", help="recompute regrets and invariants of a saved transcript")
    p.add_argument("transcript", type=Path)
    p.add_argument("--gamma", type=float, default=None, help="mean-based slack (default 1/sqrt(T))")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("rerun", help="repeat a run from its manifest; exit 0 iff all checksums match")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    return ap


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse twice: config-file values become defaults, explicit flags still win."""
    args = parser.parse_args(argv)
    cfg = getattr(args, "config", None)
    if cfg is None:
        return args
    try:
        values = json.loads(Path(cfg).read_text())
    except (OSError, json.JSONDecodeError) as e:
        parser.error(f"cannot read config {cfg}: {e}")
    if not isinstance(values, dict):
        parser.error("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(values) - known
    if unknown:
        parser.error(f"unknown config keys: {sorted(unknown)}")
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _check_budget(args, T: int, k: int):
    if T * k > MAX_WORK and not args.allow_large:
        raise ValueError(f"T*k = {T * k:.3g} exceeds {MAX_WORK:.0e}; pass --allow-large to run it")


def _check_lp_size(args, k: int):
    if k > MAX_LP_K and not args.allow_large:
        raise ValueError(f"k = {k} exceeds {MAX_LP_K}; pass --allow-large to run it")


def _dispatch(args) -> ex.Experiment:
    c = args.command
    if c == "stackelberg-sweep":
        _check_lp_size(args, max(args.ks) if args.ks else args.k_max)
        return ex.stackelberg_sweep(args.k_min, args.k_max, args.step, args.model, args.tau, args.ks,
                                    args.exact, rel_tol=args.rel_tol)
    if c == "stackelberg-strategy":
        _check_lp_size(args, args.k)
        return ex.stackelberg_strategy(args.k, args.model, args.tau, args.tol, args.eps, args.exact)
    if c == "uniform-bound":
        _check_budget(args, args.rounds, args.k)
        return ex.uniform_bound(args.model, args.k, args.rounds, args.tau, args.learner, args.seed,
                                args.save_transcripts)
    if c == "equal-looting":
        _check_budget(args, args.rounds, args.k)
        return ex.equal_looting(args.model, args.k, args.rounds, args.tau, args.learner, args.optimizer,
                                args.seed, args.save_transcripts)
    if c == "convergence":
        _check_budget(args, args.rounds, args.k)
        return ex.convergence(args.alg_a, args.alg_b, args.k, args.rounds, args.model, args.tau,
                              args.thresholds, args.seed, args.points, args.save_transcripts)
    if c == "threat":
        _check_budget(args, args.rounds, args.k)
        return ex.threat(args.k, args.rounds, args.compliant, args.deviate_at, args.save_transcripts)
    if c == "nash":
        _check_budget(args, max(args.rounds_list), args.k)
        return ex.nash_in_algorithm_space(args.k, args.rounds_list, args.c_eta, args.c_delta,
                                          args.margin_exponent, args.save_transcripts)
    if c == "audit":
        tr = pio.load_transcript(args.transcript)
        return ex.audit_transcript(tr, args.gamma)
    raise ValueError(c)


def _write_outputs(exp: ex.Experiment, out: Path, fmt: str) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    files = [pio.write_json(exp.report, out / "report.json")]
    for name, doc in exp.documents.items():
        files.append(pio.write_json(doc, out / f"{name}.json"))
    for name, (header, rows) in exp.tables.items():
        if fmt == "json":
            files.append(pio.write_json([dict(zip(header, r)) for r in rows], out / f"{name}.table.json"))
        else:
            path = out / f"{name}.csv"
            path.write_text(pio.csv_text(header, rows))
            files.append(path)
    for name, tr in exp.transcripts.items():
        files.append(pio.save_transcript(tr, out / f"{name}.jsonl"))
    return {p.name: pio.sha256_file(p) for p in files}


def _resolved(args) -> dict:
    d = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    d.pop("config", None)
    d.pop("out", None)
    return d


def _emit(exp: ex.Experiment):
    print(f"{exp.report['subcommand']}: {'all checks pass' if exp.passed else 'some checks FAIL'}")
    ex.print_checks(exp.report)


def _run(args) -> int:
    t0 = time.perf_counter()
    exp = _dispatch(args)
    dt = time.perf_counter() - t0
    _emit(exp)
    if args.out is not None:
        sums = _write_outputs(exp, args.out, args.format)
        seeds = [tr.seeds for tr in exp.transcripts.values()]
        manifest = {"command": args.command, "config": _resolved(args), "seeds": seeds,
                    "output_paths": [str(args.out / n) for n in sorted(sums)], "outputs": sums, "duration_seconds": round(dt, 3), "passed": exp.passed}
        pio.write_json(manifest, args.out / "manifest.json")
        print(f"wrote {len(sums)} files to {args.out}", file=sys.stderr)
    return 0 if exp.passed else EXIT_FAIL


def _rerun(args) -> int:
    man = json.loads(Path(args.manifest).read_text())
    cfg = dict(man["config"])
    parser = build_parser()
    ns = parser.parse_args([cfg["command"]] + (["dummy"] if cfg["command"] == "audit" else []))
    for key, v in cfg.items():
        setattr(ns, key, Path(v) if key == "transcript" else v)
    ns.out = args.out or Path(args.manifest).parent / "rerun"
    _run(ns)
    new = json.loads((ns.out / "manifest.json").read_text())["outputs"]
    # the report embeds nothing time-dependent, so every output must match byte for byte
    diff = sorted(n for n in set(man["outputs"]) | set(new) if man["outputs"].get(n) != new.get(n))
    if diff:
        print(f"rerun differs in: {', '.join(diff)}")
        return EXIT_FAIL
    print(f"rerun reproduced all {len(new)} outputs")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = _apply_config(parser, argv)
    try:
        if args.command == "rerun":
            return _rerun(args)
        return _run(args)
    except (DomainError, ValueError, pio.TranscriptFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except MemoryError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
