"""Command line interface: run a configured workload, check a trace,
or fuzz random workloads end to end.

Exit codes: run 0 = all machines committed, 2 = step budget exhausted,
1 = bad input or internal invariant violation.  check 0 = serializable,
3 = not serializable, 1 = malformed trace.  fuzz 0 iff every generated run
was serializable.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

from .anomaly import forged_lost_update_trace
from .asm import AsmError
from .checker import (
    TooManyMachines,
    Verdict,
    brute_force_serializable,
    check_serializable,
)
from .controller import LockInvariantViolation
from .dsl import ParseError, ProgramError, parse_program
from .engine import (
    ConfigError,
    InconsistentGlobalUpdate,
    MalformedTrace,
    RunConfig,
    load_trace,
    run,
    write_trace,
)
from .fuzz import FuzzParams, random_config
from .workloads import count_events

POLICY_FLAGS = ("wait_mode", "lock_policy", "commit_policy", "victim_policy",
                "run_mode")


def _default_seed() -> int:
    raw = os.environ.get("TASERIAL_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"TASERIAL_SEED must be an integer, got {raw!r}")


def load_manifest(path: str) -> RunConfig:
    """Run manifest: JSON with a list of program files plus run settings."""
    base = Path(path).parent
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if not isinstance(manifest, dict) or "programs" not in manifest:
        raise ConfigError(f"{path}: manifest needs a 'programs' list")
    machines = []
    for rel in manifest["programs"]:
        text = (base / rel).read_text(encoding="utf-8")
        machines.append(parse_program(text))
    kwargs = {}
    for key in ("domain_size", "registration", "seed", "max_steps") + POLICY_FLAGS:
        if key in manifest:
            kwargs[key] = manifest[key]
    return RunConfig(machines=machines, **kwargs)


def cmd_run(args) -> int:
    try:
        config = load_manifest(args.config)
    except (OSError, json.JSONDecodeError, ParseError, ProgramError,
            ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config.seed = args.seed
    elif "TASERIAL_SEED" in os.environ:
        config.seed = _default_seed()
    if args.max_steps is not None:
        config.max_steps = args.max_steps
    for flag in POLICY_FLAGS:
        value = getattr(args, flag)
        if value is not None:
            setattr(config, flag, value)
    for warning in config.closed_system_warnings():
        print(f"warning: {warning}", file=sys.stderr)
    try:
        trace = run(config)
    except (LockInvariantViolation, InconsistentGlobalUpdate) as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 1
    except AsmError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.trace:
        write_trace(trace, args.trace)
    print(json.dumps({
        "status": trace.status,
        "steps": len(trace.steps),
        "committed": trace.committed,
        "victimizations": count_events(trace, "victimize"),
        "undos": count_events(trace, "undo"),
    }))
    return 0 if trace.status == "done" else 2


def _verdict_record(verdict: Verdict, oracle: str) -> dict:
    out = {"serializable": verdict.ok, "oracle": oracle,
           "order": verdict.order}
    if not verdict.ok:
        out["reason"] = verdict.reason
        if verdict.witness:
            out["witness"] = verdict.witness
    return out


def cmd_check(args) -> int:
    try:
        trace = load_trace(args.trace)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (MalformedTrace, ParseError, ProgramError, ConfigError) as e:
        print(f"malformed trace: {e}", file=sys.stderr)
        return 1
    try:
        if args.brute_force:
            verdict = brute_force_serializable(trace)
            record = _verdict_record(verdict, "brute-force")
        else:
            verdict = check_serializable(trace)
            record = _verdict_record(verdict, "commit-order")
    except TooManyMachines as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except MalformedTrace as e:
        print(f"malformed trace: {e}", file=sys.stderr)
        return 1
    print(json.dumps(record))
    return 0 if verdict.ok else 3


def cmd_fuzz(args) -> int:
    if args.self_test:
        return _anomaly_self_test()
    params = FuzzParams(n_machines=args.machines, n_shared=args.locations)
    stats = {"commit": 0, "victimize": 0, "undo": 0, "lock_refuse": 0}
    failures: List[int] = []
    for i in range(args.runs):
        seed = args.seed + i
        config = random_config(seed, params)
        try:
            trace = run(config)
            verdict = check_serializable(trace)
        except AsmError as e:
            print(f"run seed={seed}: error: {e}")
            failures.append(seed)
            continue
        for kind in stats:
            stats[kind] += count_events(trace, kind)
        ok = trace.status == "done" and verdict.ok
        print(f"run seed={seed}: status={trace.status} "
              f"steps={len(trace.steps)} "
              f"serializable={'yes' if verdict.ok else 'NO'}")
        if not ok:
            failures.append(seed)
            dump = f"fuzz-fail-{seed}.jsonl"
            write_trace(trace, dump)
            print(f"  repro: taserial fuzz --runs 1 --seed {seed} "
                  f"--machines {args.machines} --locations {args.locations}; "
                  f"trace dumped to {dump}")
    print(f"aggregate: runs={args.runs} failures={len(failures)} "
          f"commits={stats['commit']} victimizations={stats['victimize']} "
          f"undos={stats['undo']} refusals={stats['lock_refuse']}")
    return 0 if not failures else 3


def _anomaly_self_test() -> int:
    trace = forged_lost_update_trace()
    fast = check_serializable(trace)
    slow = brute_force_serializable(trace)
    print(json.dumps({"commit_order_rejects": not fast.ok,
                      "brute_force_rejects": not slow.ok}))
    return 0 if not fast.ok and not slow.ok else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taserial",
        description="Locking transaction controller simulator and "
                    "serializability checker.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a workload manifest")
    p_run.add_argument("config", help="JSON manifest listing program files")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--max-steps", type=int, default=None)
    p_run.add_argument("--trace", default=None, help="write trace file here")
    p_run.add_argument("--wait-mode", choices=["retry", "suspend"],
                       dest="wait_mode", default=None)
    p_run.add_argument("--lock-policy", dest="lock_policy",
                       choices=["random", "fifo", "lowest-id"], default=None)
    p_run.add_argument("--commit-policy", dest="commit_policy",
                       choices=["random", "lowest-id"], default=None)
    p_run.add_argument("--victim-policy", dest="victim_policy",
                       choices=["shortest-history", "random"], default=None)
    p_run.add_argument("--run-mode", dest="run_mode",
                       choices=["sync", "interleave"], default=None)
    p_run.set_defaults(func=cmd_run)

    p_check = sub.add_parser("check", help="check a trace for serializability")
    p_check.add_argument("trace")
    p_check.add_argument("--brute-force", action="store_true")
    p_check.set_defaults(func=cmd_check)

    p_fuzz = sub.add_parser("fuzz", help="random workloads, run and check each")
    p_fuzz.add_argument("--runs", type=int, default=20)
    p_fuzz.add_argument("--machines", type=int, default=3)
    p_fuzz.add_argument("--locations", type=int, default=3)
    p_fuzz.add_argument("--seed", type=int, default=None)
    p_fuzz.add_argument("--self-test", action="store_true",
                        help="check that the forged lost-update trace is "
                             "rejected")
    p_fuzz.set_defaults(func=cmd_fuzz)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    if args.command == "fuzz" and args.seed is None:
        args.seed = _default_seed()
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
