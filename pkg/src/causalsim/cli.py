"""Command-line entry point: simulate, check, adversary, compare, fixture."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from pathlib import Path

from . import harness
from .adversary import get_scenario
from .checkers import (audit_fastness, check_causal_serialization, check_one_version,
                       check_progress)
from .errors import BudgetExceeded, CausalSimError, ProtocolShapeMismatch
from .history import History
from .protocols import get_protocol, protocol_names
from .simnet import MessageLog, canon

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3

WORKLOAD_FLAGS = {
    # flag dest -> WorkloadSpec field
    "clients": "clients", "servers": "servers", "objects": "objects", "ops": "ops_per_client",
    "write_ratio": "write_ratio", "rot_size": "rot_size", "seed": "seed", "horizon": "horizon",
    "wot_size": "wot_size", "delay_min": "delay_min", "delay_max": "delay_max",
    "samples": "samples", "slow_channels": "slow_channels",
}
FIXTURES = {"sole-wot": "sole_wot.jsonl", "mixed-pair": "mixed_pair.jsonl"}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _workload_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--clients", type=int)
    p.add_argument("--servers", type=int)
    p.add_argument("--objects", type=int)
    p.add_argument("--ops", type=int, help="operations per client")
    p.add_argument("--write-ratio", type=float)
    p.add_argument("--rot-size", type=int)
    p.add_argument("--wot-size", type=int)
    p.add_argument("--delay-min", type=int)
    p.add_argument("--delay-max", type=int)
    p.add_argument("--samples", type=int, help="sub-histories for the causal check")
    p.add_argument("--slow-channels", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int)


def build_parser() -> Parser:
    top = Parser(prog="causalsim", description="Simulate and check causally consistent stores.")
    top.add_argument("--json", action="store_true", help="machine-readable output and errors")
    top.add_argument("--config", help="JSON file whose keys set defaults for any flag")
    sub = top.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("simulate", help="run one workload and check it")
    p.add_argument("--protocol", required=True)
    _workload_args(p)
    p.add_argument("--out", help="run directory (default runs/<protocol>-seed<seed>)")

    p = sub.add_parser("check", help="run a checker on a history file")
    p.add_argument("--history", required=True)
    p.add_argument("--messages", help="message log, needed by progress/fastness/one-version")
    p.add_argument("--checker", default="causal",
                   choices=["causal", "progress", "fastness", "one-version"])
    p.add_argument("--quiescence", type=int, help="quiescence tick for the progress checker")
    p.add_argument("--txn", help="transaction id for fastness/one-version")
    p.add_argument("--placement", help="JSON object -> server map for one-version")

    p = sub.add_parser("adversary", help="scripted adversarial scenarios")
    asub = p.add_subparsers(dest="action", parser_class=Parser)
    r = asub.add_parser("run")
    r.add_argument("--scenario", required=True, choices=["eimp", "e12"])
    r.add_argument("--protocol", required=True)
    r.add_argument("--k", type=int, default=6)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", help="write the report JSON here too")

    p = sub.add_parser("compare", help="metrics table across protocols on identical workloads")
    p.add_argument("--protocols", required=True, help="comma-separated names")
    _workload_args(p)
    p.add_argument("--runs", type=int, default=1, help="consecutive seeds starting at --seed")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", help="directory for compare.csv, compare.json and figures")

    p = sub.add_parser("fixture", help="write a shipped history fixture")
    p.add_argument("name", choices=sorted(FIXTURES))
    p.add_argument("--out", required=True)

    sub.add_parser("protocols", help="list registered protocols")
    return top


def _spec(args) -> harness.WorkloadSpec:
    if args.seed is None:
        raise UsageError("--seed is required (no ambient entropy)")
    fields = {f: getattr(args, dest) for dest, f in WORKLOAD_FLAGS.items()
              if getattr(args, dest, None) is not None}
    try:
        return harness.WorkloadSpec.from_json(fields)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def _emit(obj, out=None) -> None:
    out = out or sys.stdout
    out.write(json.dumps(canon(obj), sort_keys=True, indent=2) + "\n")


def cmd_simulate(args) -> int:
    spec = _spec(args)
    get_protocol(args.protocol)
    out = Path(args.out or f"runs/{args.protocol}-seed{spec.seed}")
    res = harness.run_workload(spec, args.protocol, out)
    body = {"run_dir": str(out), "summary": res.metrics.row(), "witnesses": res.witnesses,
            "notes": res.metrics.notes}
    _emit(body)
    return EXIT_PASS if res.metrics.passed else EXIT_FAIL


def cmd_check(args) -> int:
    h = History.load(args.history)
    h.validate()
    log = MessageLog.load(args.messages) if args.messages else None
    if args.checker != "causal" and log is None:
        raise UsageError(f"--messages is required for the {args.checker} checker")
    if args.checker == "causal":
        v = check_causal_serialization(h)
    elif args.checker == "progress":
        if args.quiescence is None:
            raise UsageError("--quiescence is required for the progress checker")
        v = check_progress(h, log, args.quiescence)
    else:
        if not args.txn:
            raise UsageError(f"--txn is required for the {args.checker} checker")
        if args.checker == "fastness":
            v = audit_fastness(h, log, args.txn)
        else:
            if not args.placement:
                raise UsageError("--placement is required for the one-version checker")
            v = check_one_version(h, log, args.txn, json.loads(args.placement))
    _emit(v.to_json())
    return EXIT_PASS if v.passed else EXIT_FAIL


def cmd_adversary(args) -> int:
    if args.action != "run":
        raise UsageError("usage: adversary run --scenario {eimp,e12} --protocol NAME")
    binding = get_protocol(args.protocol)
    report = get_scenario(args.scenario, k=args.k, seed=args.seed).run(binding)
    text = report.dumps()
    if args.out:
        Path(args.out).write_text(text + "\n")
    sys.stdout.write(text + "\n")
    return EXIT_PASS


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c, "") for c in columns})
    return buf.getvalue()


def cmd_compare(args) -> int:
    spec = _spec(args)
    names = [n.strip() for n in args.protocols.split(",") if n.strip()]
    bindings = [get_protocol(n) for n in names]
    seeds = list(range(spec.seed, spec.seed + max(1, args.runs)))
    rows, lags = [], {}
    for seed in seeds:
        s = harness.WorkloadSpec.from_json({**spec.to_json(), "seed": seed})
        for b in bindings:
            res = harness.run_workload(s, b)
            rows.append(res.metrics.row())
            lags.setdefault(b.name, []).extend(res.metrics.visibility_lag)
    summary = harness.summarize(rows)
    if args.out:
        from . import plots
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text(_csv(rows, harness.COMPARE_COLUMNS))
        (out / "compare.json").write_text(json.dumps({"rows": rows, "summary": summary},
                                                     sort_keys=True, indent=2) + "\n")
        plots.tradeoff_figure(summary, out / "tradeoff.png")
        plots.lag_figure(lags, out / "visibility_lag.png")
    if args.format == "json" or args.json:
        _emit({"rows": rows, "summary": summary})
    else:
        sys.stdout.write(_csv(rows, harness.COMPARE_COLUMNS))
    return EXIT_PASS if all(r["causal"] and r["progress"] for r in rows) else EXIT_FAIL


def cmd_fixture(args) -> int:
    text = resources.files("causalsim").joinpath("data", FIXTURES[args.name]).read_text()
    Path(args.out).write_text(text)
    return EXIT_PASS


def cmd_protocols(args) -> int:
    for n in protocol_names():
        b = get_protocol(n)
        print(f"{n}\t{b.description}")
    return EXIT_PASS


COMMANDS = {"simulate": cmd_simulate, "check": cmd_check, "adversary": cmd_adversary,
            "compare": cmd_compare, "fixture": cmd_fixture, "protocols": cmd_protocols}


def _parse(argv: list[str]):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(config, dict):
            raise UsageError("config must be a JSON object")
        # config fills in defaults; flags given on the command line still win
        defaults = {k.replace("-", "_"): v for k, v in config.items()}
        for action in parser._subparsers._group_actions:
            for sp in action.choices.values():
                sp.set_defaults(**{k: v for k, v in defaults.items()
                                   if any(a.dest == k for a in sp._actions)})
        args = parser.parse_args(argv)
    return parser, args


def _error(args_json: bool, kind: str, message: str, code: int) -> int:
    if args_json:
        _emit({"error": kind, "message": message, "exit_code": code})
    else:
        print(f"causalsim: {kind}: {message}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    want_json = "--json" in argv
    try:
        parser, args = _parse(argv)
        if not args.command:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except UsageError as e:
        return _error(want_json, "usage", str(e), EXIT_USAGE)
    except BudgetExceeded as e:
        return _error(want_json, "BudgetExceeded", str(e), EXIT_BUDGET)
    except KeyError as e:
        return _error(want_json, "usage", str(e.args[0]) if e.args else "unknown name", EXIT_USAGE)
    except ProtocolShapeMismatch as e:
        return _error(want_json, "ProtocolShapeMismatch", str(e), EXIT_USAGE)
    except (CausalSimError, OSError, ValueError) as e:
        return _error(want_json, type(e).__name__, str(e), EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
