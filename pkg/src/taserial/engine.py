"""Synchronous run engine composing wrapped machines with the controller.

Every global step: snapshot the world, let each registered machine's wrapper
and the four controller components compute against the snapshot, union all
update sets (asserting consistency), apply, record.  All nondeterminism is
resolved from labeled streams derived from one master seed, so a (config,
seed) pair replays bit-for-bit.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

from . import controller as ctl
from .asm import (
    AsmError,
    Location,
    State,
    UNDEF,
    UpdateSet,
    Value,
    assign_choice_ids,
    consistent,
    loc_key,
    value_key,
    values_equal,
)
from .dsl import MachineProgram, parse_program, print_program
from .seeds import make_rng
from .wrapper import (
    ACTIVE,
    ControllerView,
    LockPair,
    MachineCtl,
    UNREGISTERED,
    WAIT_LOCKS,
    WAIT_RECOVERY,
    wrapper_step,
)

TRACE_VERSION = 1


class RunError(AsmError):
    pass


class InconsistentGlobalUpdate(RunError):
    """The union of one step's update sets clashed; a controller bug."""


class ConfigError(RunError):
    pass


class UnknownMachine(RunError):
    pass


@dataclass
class RunConfig:
    """Everything needed to reproduce a run except the master seed."""

    machines: List[MachineProgram]
    domain_size: int = 8
    registration: Dict[str, int] = field(default_factory=dict)
    wait_mode: str = "retry"  # or "suspend"
    lock_policy: str = "random"
    commit_policy: str = "random"
    victim_policy: str = "shortest-history"
    run_mode: str = "sync"  # or "interleave"
    seed: int = 0
    max_steps: int = 200

    def __post_init__(self):
        names = [m.name for m in self.machines]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate machine names: {names}")
        if self.wait_mode not in ("retry", "suspend"):
            raise ConfigError(f"unknown wait mode {self.wait_mode!r}")
        if self.run_mode not in ("sync", "interleave"):
            raise ConfigError(f"unknown run mode {self.run_mode!r}")
        if self.domain_size < 1:
            raise ConfigError("domain size must be positive")
        self.machines = sorted(self.machines, key=lambda m: m.name)
        rules = []
        for m in self.machines:
            rules.append(m.main_rule)
            rules.extend(n.body for _, n in sorted(m.named_rules.items()))
        assign_choice_ids(rules)

    @property
    def machine_ids(self) -> List[str]:
        return [m.name for m in self.machines]

    def program(self, machine_id: str) -> MachineProgram:
        for m in self.machines:
            if m.name == machine_id:
                return m
        raise UnknownMachine(machine_id)

    def domain(self) -> Tuple[int, ...]:
        return tuple(range(self.domain_size))

    def initial_state(self) -> State:
        values: Dict[Location, Value] = {}
        for m in self.machines:
            for loc, val in m.inits:
                if loc in values and not values_equal(values[loc], val):
                    raise ConfigError(
                        f"conflicting initial values for {loc}: "
                        f"{values[loc]!r} vs {val!r}")
                values[loc] = val
        return State(values, self.domain())

    def to_payload(self) -> dict:
        return {
            "programs": {m.name: print_program(m) for m in self.machines},
            "domain_size": self.domain_size,
            "registration": dict(sorted(self.registration.items())),
            "wait_mode": self.wait_mode,
            "lock_policy": self.lock_policy,
            "commit_policy": self.commit_policy,
            "victim_policy": self.victim_policy,
            "run_mode": self.run_mode,
            "seed": self.seed,
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "RunConfig":
        return cls(
            machines=[parse_program(t) for t in payload["programs"].values()],
            domain_size=payload["domain_size"],
            registration=dict(payload.get("registration", {})),
            wait_mode=payload["wait_mode"],
            lock_policy=payload["lock_policy"],
            commit_policy=payload["commit_policy"],
            victim_policy=payload["victim_policy"],
            run_mode=payload.get("run_mode", "sync"),
            seed=payload.get("seed", 0),
            max_steps=payload.get("max_steps", 200),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_payload(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
        return hashlib.blake2b(blob, digest_size=8).hexdigest()

    def closed_system_warnings(self) -> List[str]:
        """External locations should be owned (shared/output) by some other
        machine; violations undermine the serializability guarantee."""
        out = []
        for m in self.machines:
            others = [n for n in self.machines if n.name != m.name]
            for f in sorted(m.shared | m.monitored):
                if not any(f in (o.shared | o.output) for o in others):
                    out.append(f"{m.name}: external function {f!r} is not "
                               f"shared/output of any other machine")
            for f in sorted(m.output):
                if not any(f in (o.shared | o.monitored) for o in others):
                    out.append(f"{m.name}: output function {f!r} is not "
                               f"observed by any other machine")
        return out


@dataclass
class MachineStep:
    updates: UpdateSet
    reads: Tuple[Tuple[Location, Value], ...]
    ctl_change: Optional[Tuple[str, str]]
    proper: bool


@dataclass
class StepRecord:
    index: int
    per_machine: Dict[str, MachineStep]
    events: List[dict]
    state_hash: str

    def delta(self) -> UpdateSet:
        """All location updates applied in this step (machines + undo restores)."""
        out: set = set()
        for ms in self.per_machine.values():
            out |= ms.updates
        for ev in self.events:
            if ev["kind"] == "undo":
                out |= set(ev["restored"])
        return frozenset(out)


@dataclass
class Trace:
    config: RunConfig
    seed: int
    initial_values: Dict[Location, Value]
    steps: List[StepRecord]
    final_values: Dict[Location, Value]
    status: str  # "done" | "budget"
    committed: List[str]  # commit order
    registered: List[str]

    @property
    def machines(self) -> List[str]:
        return list(self.registered)


# ---------------------------------------------------------------------------
# Canonical encoding (trace files and state hashing)


def encode_value(v: Value):
    if v is UNDEF:
        return ["u"]
    if v is True or v is False:
        return ["b", bool(v)]
    if isinstance(v, int):
        return ["i", v]
    return ["s", v]


def decode_value(payload) -> Value:
    tag = payload[0]
    if tag == "u":
        return UNDEF
    if tag == "b":
        return bool(payload[1])
    if tag == "i":
        return int(payload[1])
    return payload[1]


def encode_location(loc: Location):
    return [loc.func, [encode_value(a) for a in loc.args]]


def decode_location(payload) -> Location:
    return Location(payload[0], tuple(decode_value(a) for a in payload[1]))


def encode_pairs(pairs) -> list:
    return [[encode_location(l), encode_value(v)]
            for l, v in sorted(pairs, key=lambda p: (loc_key(p[0]), value_key(p[1])))]


def decode_pairs(payload):
    return [(decode_location(l), decode_value(v)) for l, v in payload]


def state_digest(state: State) -> str:
    blob = json.dumps(encode_pairs(state.values.items()),
                      sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.blake2b(blob, digest_size=8).hexdigest()


# ---------------------------------------------------------------------------
# The engine


def run(config: RunConfig, seed: Optional[int] = None,
        max_steps: Optional[int] = None,
        initial_state: Optional[State] = None,
        only: Optional[List[str]] = None) -> Trace:
    """Execute the composed system and record a full trace.

    `only` restricts which machines register (used to build serial runs);
    `initial_state` overrides the configured initial values.
    """
    seed = config.seed if seed is None else seed
    max_steps = config.max_steps if max_steps is None else max_steps
    if max_steps < 1:
        raise ConfigError("max_steps must be >= 1")
    active_ids = config.machine_ids if only is None else list(only)
    for m in active_ids:
        config.program(m)  # raises UnknownMachine

    state = initial_state if initial_state is not None else config.initial_state()
    state = State(dict(state.values), config.domain())
    initial_values = dict(state.values)

    cs = ctl.ControllerState()
    tcbs = {m: MachineCtl(machine_id=m) for m in active_ids}
    committed: List[str] = []
    steps: List[StepRecord] = []
    reg_step = {m: config.registration.get(m, 0) for m in active_ids}

    status = "budget"
    for index in range(max_steps):
        events: List[dict] = []
        # Registration is the entry into the controller's supervision; the
        # history starts empty.
        for m in sorted(active_ids):
            if reg_step[m] == index and tcbs[m].ctl_state == UNREGISTERED:
                tcbs[m].ctl_state = ACTIVE
                cs.transact.add(m)
                cs.histories[m] = []
                events.append({"kind": "register", "machine": m})

        if all(m in committed for m in active_ids):
            status = "done"
            break

        acting_machines, controller_acts = _acting(config, active_ids, tcbs,
                                                   seed, index)

        # Compute phase: every agent reads the same snapshot.
        per_machine: Dict[str, MachineStep] = {}
        machine_effects: List[Tuple[str, tuple]] = []
        updates: set = set()
        for m in acting_machines:
            tcb = tcbs[m]
            view = ControllerView(
                victim=m in cs.victims,
                granted=cs.granted.get(m),
                refused=cs.refused.get(m),
                held=cs.locks.locked_by(m),
                w_held=cs.locks.w_locked_by(m),
            )
            out = wrapper_step(config.program(m), tcb, state, view, seed,
                               index, config.wait_mode)
            per_machine[m] = MachineStep(out.updates, out.reads,
                                         out.ctl_change, out.proper)
            updates |= out.updates
            for eff in out.effects:
                machine_effects.append((m, eff))

        controller_effects: List[tuple] = []
        restores: FrozenSet = frozenset()
        if controller_acts:
            eff, ev = ctl.lock_handler_step(
                cs, make_rng(seed, "lock", index), config.lock_policy,
                config.wait_mode)
            controller_effects += eff
            events += ev
            eff, ev = ctl.commit_step(cs, make_rng(seed, "commit", index),
                                      config.commit_policy)
            controller_effects += eff
            events += ev
            eff, ev = ctl.deadlock_handler_step(
                cs, make_rng(seed, "victim", index), config.victim_policy)
            controller_effects += eff
            events += ev
            eff, ev, restores = ctl.recovery_step(
                cs, make_rng(seed, "recover", index))
            controller_effects += eff
            events += ev

        delta = frozenset(updates) | restores
        if not consistent(delta):
            raise InconsistentGlobalUpdate(
                f"step {index}: clashing updates in global step")
        state = state.with_updates(delta)

        # Apply phase.
        for m, eff in machine_effects:
            _apply_machine_effect(cs, tcbs[m], eff, events)
        for m in acting_machines:
            tcb = tcbs[m]
            nxt = per_machine[m].ctl_change
            if nxt is not None:
                tcb.ctl_state = nxt[1]
        for eff in controller_effects:
            if eff[0] == "undo":
                machine = eff[1]
                entry = cs.histories[machine][-1]
                if entry.ordinal is not None:
                    tcbs[machine].proper_count = entry.ordinal
            ctl.apply_effect(cs, eff, committed)

        steps.append(StepRecord(index=index, per_machine=per_machine,
                                events=events, state_hash=state_digest(state)))
        cs.check_invariants()
        if all(m in committed for m in active_ids):
            status = "done"
            break

    return Trace(config=config, seed=seed, initial_values=initial_values,
                 steps=steps, final_values=dict(state.values), status=status,
                 committed=committed, registered=list(active_ids))


def _acting(config: RunConfig, active_ids, tcbs, seed: int, index: int):
    registered = [m for m in sorted(active_ids)
                  if tcbs[m].ctl_state in (ACTIVE, WAIT_LOCKS, WAIT_RECOVERY)]
    if config.run_mode == "sync":
        return registered, True
    agents = registered + ["<controller>"]
    if not agents:
        return [], False
    rng = make_rng(seed, "interleave", index)
    chosen = agents[rng.randrange(len(agents))]
    if chosen == "<controller>":
        return [], True
    return [chosen], False


def _apply_machine_effect(cs: ctl.ControllerState, tcb: MachineCtl,
                          eff: tuple, events: List[dict]) -> None:
    kind = eff[0]
    m = tcb.machine_id
    if kind == "lock_request":
        pair: LockPair = eff[1]
        cs.lock_requests.append((cs.next_order, m, pair))
        cs.next_order += 1
        cs.last_request[m] = (pair, ctl.PENDING)
        events.append({"kind": "lock_request", "machine": m})
    elif kind == "commit_request":
        cs.commit_requests.add(m)
        cs.last_request.pop(m, None)
    elif kind == "consume_granted":
        cs.granted.pop(m, None)
    elif kind == "consume_refused":
        cs.refused.pop(m, None)
    elif kind == "append_history":
        entry = eff[1]
        cs.histories[m].append(entry)
        if entry.ordinal is not None:
            tcb.proper_count = entry.ordinal + 1
    elif kind == "withdraw_request":
        cs.lock_requests = [t for t in cs.lock_requests if t[1] != m]
        # The stored pair keeps feeding the wait relation during recovery.
        if m in cs.last_request:
            pair, _ = cs.last_request[m]
            cs.last_request[m] = (pair, ctl.REFUSED)
    else:
        raise ValueError(f"unknown wrapper effect {eff!r}")


# ---------------------------------------------------------------------------
# Schedules and state reconstruction


@dataclass
class Schedule:
    machine: str
    entries: List[Tuple[int, UpdateSet, Tuple[Tuple[Location, Value], ...]]]


def project_schedule(trace: Trace, machine: str) -> Schedule:
    """Per-machine projection of a trace: one entry per global step."""
    if machine not in trace.registered:
        raise UnknownMachine(machine)
    entries = []
    for rec in trace.steps:
        ms = rec.per_machine.get(machine)
        if ms is None:
            entries.append((rec.index, frozenset(), ()))
        else:
            entries.append((rec.index, ms.updates, ms.reads))
    return Schedule(machine, entries)


def state_at(trace: Trace, index: int) -> State:
    """State after `index` steps have been applied (0 = initial state)."""
    state = State(dict(trace.initial_values),
                  tuple(range(trace.config.domain_size)))
    for rec in trace.steps[:index]:
        state = state.with_updates(rec.delta())
    return state


# ---------------------------------------------------------------------------
# Trace files (line-delimited canonical JSON)


class MalformedTrace(AsmError):
    pass


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def trace_to_lines(trace: Trace) -> List[str]:
    header = {
        "type": "header",
        "version": TRACE_VERSION,
        "config": trace.config.to_payload(),
        "config_digest": trace.config.digest(),
        "seed": trace.seed,
        "registered": list(trace.registered),
        "initial_state": encode_pairs(trace.initial_values.items()),
    }
    lines = [_dump(header)]
    for rec in trace.steps:
        machines = {}
        for m, ms in sorted(rec.per_machine.items()):
            machines[m] = {
                "updates": encode_pairs(ms.updates),
                "reads": encode_pairs(ms.reads),
                "ctl": list(ms.ctl_change) if ms.ctl_change else None,
                "proper": ms.proper,
            }
        events = []
        for ev in rec.events:
            ev = dict(ev)
            if "restored" in ev:
                ev["restored"] = encode_pairs(ev["restored"])
            events.append(ev)
        lines.append(_dump({
            "type": "step",
            "index": rec.index,
            "machines": machines,
            "events": events,
            "state_hash": rec.state_hash,
        }))
    lines.append(_dump({
        "type": "final",
        "status": trace.status,
        "committed": list(trace.committed),
        "final_state": encode_pairs(trace.final_values.items()),
    }))
    return lines


def write_trace(trace: Trace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in trace_to_lines(trace):
            fh.write(line + "\n")


def trace_from_lines(lines: List[str]) -> Trace:
    try:
        records = [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as e:
        raise MalformedTrace(f"invalid JSON: {e}") from None
    if not records or records[0].get("type") != "header":
        raise MalformedTrace("missing header record")
    if records[-1].get("type") != "final":
        raise MalformedTrace("missing final record (truncated trace?)")
    header, final = records[0], records[-1]
    if header.get("version") != TRACE_VERSION:
        raise MalformedTrace(f"unsupported trace version {header.get('version')!r}")
    try:
        config = RunConfig.from_payload(header["config"])
        steps = []
        for rec in records[1:-1]:
            if rec.get("type") != "step":
                raise MalformedTrace(f"unexpected record type {rec.get('type')!r}")
            per_machine = {}
            for m, ms in rec["machines"].items():
                per_machine[m] = MachineStep(
                    updates=frozenset(decode_pairs(ms["updates"])),
                    reads=tuple(decode_pairs(ms["reads"])),
                    ctl_change=tuple(ms["ctl"]) if ms["ctl"] else None,
                    proper=ms["proper"],
                )
            events = []
            for ev in rec["events"]:
                ev = dict(ev)
                if "restored" in ev:
                    ev["restored"] = decode_pairs(ev["restored"])
                events.append(ev)
            steps.append(StepRecord(index=rec["index"], per_machine=per_machine,
                                    events=events, state_hash=rec["state_hash"]))
        return Trace(
            config=config,
            seed=header["seed"],
            initial_values=dict(decode_pairs(header["initial_state"])),
            steps=steps,
            final_values=dict(decode_pairs(final["final_state"])),
            status=final["status"],
            committed=list(final["committed"]),
            registered=list(header["registered"]),
        )
    except (KeyError, IndexError, TypeError) as e:
        raise MalformedTrace(f"malformed trace record: {e!r}") from None


def load_trace(path: str) -> Trace:
    with open(path, "r", encoding="utf-8") as fh:
        return trace_from_lines(fh.read().splitlines())
