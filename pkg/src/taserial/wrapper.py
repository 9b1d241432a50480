"""Per-machine transactional wrapper.

Wraps one machine in a small control-state machine that negotiates locks
with the controller before every step touching non-private locations,
records undo information for each proper step, and reacts to victimization
by pausing until recovered.

Control states: "unregistered" -> "active" <-> "wait-locks",
"active" <-> "wait-recovery", "active" -> "done" (commit requested).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

from .asm import (
    AsmError,
    Location,
    State,
    UpdateSet,
    Value,
    eval_formula,
    loc_key,
)
from .dsl import MachineProgram
from .rwloc import RwSet, rw_rule
from .seeds import ChoiceResolver, derive_bytes

UNREGISTERED = "unregistered"
ACTIVE = "active"
WAIT_LOCKS = "wait-locks"
WAIT_RECOVERY = "wait-recovery"
DONE = "done"


class IllegalControlState(AsmError):
    pass


class InvalidWrite(AsmError):
    """A machine tried to write one of its monitored locations."""


@dataclass(frozen=True)
class LockPair:
    r_loc: FrozenSet[Location] = frozenset()
    w_loc: FrozenSet[Location] = frozenset()

    def is_empty(self) -> bool:
        return not self.r_loc and not self.w_loc

    def all_locations(self) -> FrozenSet[Location]:
        return self.r_loc | self.w_loc


EMPTY_LOCKS = LockPair()


@dataclass
class HistoryEntry:
    """Undo record for one proper step (last-in first-out).

    saved holds the overwritten values of shared/output write locations.
    private_saved holds overwritten controlled-location values; restoring
    them too makes a recovered machine re-execute from exactly the state it
    had before the undone step, which the serializability argument needs.
    """

    saved: Tuple[Tuple[Location, Value], ...]
    locks: LockPair
    private_saved: Tuple[Tuple[Location, Value], ...] = ()
    origin_step: Optional[int] = None
    ordinal: Optional[int] = None


@dataclass
class MachineCtl:
    """Mutable per-machine transactional bookkeeping owned by the run engine."""

    machine_id: str
    ctl_state: str = UNREGISTERED
    proper_count: int = 0


@dataclass
class ControllerView:
    """Read-only slice of controller state a wrapper step may consult."""

    victim: bool
    granted: Optional[LockPair]
    refused: Optional[LockPair]
    held: FrozenSet[Location]
    w_held: FrozenSet[Location]


@dataclass
class WrapperOutcome:
    updates: UpdateSet = frozenset()
    reads: Tuple[Tuple[Location, Value], ...] = ()
    proper: bool = False
    next_ctl: str = ACTIVE
    ctl_change: Optional[Tuple[str, str]] = None
    effects: List[tuple] = field(default_factory=list)


def _analysis(program: MachineProgram, state: State, material: bytes):
    read_log: Dict[Location, Value] = {}
    resolver = ChoiceResolver(material)
    rw = rw_rule(program.main_rule, state, {}, resolver, program.named_rules, read_log)
    return rw, read_log


def new_locks(program: MachineProgram, state: State, view: ControllerView,
              material: bytes, rw: Optional[RwSet] = None) -> LockPair:
    """Locks the machine still needs for its next step in this state.

    Reads intersected with shared/monitored minus every held lock; writes
    intersected with shared/output minus held write locks.
    """
    if rw is None:
        rw, _ = _analysis(program, state, material)
    r_loc = frozenset(
        l for l in rw.reads
        if program.classify(l.func) in ("shared", "monitored")) - view.held
    w_loc = frozenset(
        l for l in rw.writes
        if program.classify(l.func) in ("shared", "output")) - view.w_held
    return LockPair(r_loc, w_loc)


def new_locks_needed(program: MachineProgram, state: State, view: ControllerView,
                     material: bytes) -> bool:
    return not new_locks(program, state, view, material).is_empty()


def overwritten_values(program: MachineProgram, state: State,
                       writes: FrozenSet[Location]) -> Tuple[Tuple[Location, Value], ...]:
    """Current values of the shared/output locations about to be written."""
    out = [(l, state.get(l)) for l in writes
           if program.classify(l.func) in ("shared", "output")]
    return tuple(sorted(out, key=lambda p: loc_key(p[0])))


def _private_overwritten(program: MachineProgram, state: State,
                         writes: FrozenSet[Location]) -> Tuple[Tuple[Location, Value], ...]:
    out = [(l, state.get(l)) for l in writes
           if program.classify(l.func) == "controlled"]
    return tuple(sorted(out, key=lambda p: loc_key(p[0])))


def choice_material(seed: int, machine_id: str, ordinal: int) -> bytes:
    """Seed material for the machine's next proper step.

    Keyed by the count of proper steps performed (not the global step
    index), so a solo re-run or a post-undo re-execution resolves every
    choose rule the same way.
    """
    return derive_bytes(seed, "choice", machine_id, ordinal)


def terminated(program: MachineProgram, state: State) -> bool:
    return eval_formula(program.terminated, state, {})


def wrapper_step(program: MachineProgram, tcb: MachineCtl, state: State,
                 view: ControllerView, seed: int, step_index: int,
                 wait_mode: str = "retry") -> WrapperOutcome:
    """One transition of the control-state machine in Fig-style composition.

    Pure function of the snapshot; lock requests, commit requests, history
    appends and flag consumption are returned as effects for the engine to
    apply after every agent has computed.
    """
    if tcb.ctl_state == ACTIVE:
        return _active_step(program, tcb, state, view, seed, step_index)
    if tcb.ctl_state == WAIT_LOCKS:
        return _wait_locks_step(program, tcb, state, view, seed, step_index,
                                wait_mode)
    if tcb.ctl_state == WAIT_RECOVERY:
        if not view.victim:
            return WrapperOutcome(next_ctl=ACTIVE,
                                  ctl_change=(WAIT_RECOVERY, ACTIVE))
        return WrapperOutcome(next_ctl=WAIT_RECOVERY)
    raise IllegalControlState(f"{tcb.machine_id} cannot step in {tcb.ctl_state}")


def _active_step(program, tcb, state, view, seed, step_index) -> WrapperOutcome:
    if view.victim:
        return WrapperOutcome(next_ctl=WAIT_RECOVERY,
                              ctl_change=(ACTIVE, WAIT_RECOVERY))
    if terminated(program, state):
        return WrapperOutcome(next_ctl=DONE, ctl_change=(ACTIVE, DONE),
                              effects=[("commit_request",)])
    material = choice_material(seed, tcb.machine_id, tcb.proper_count)
    rw, read_log = _analysis(program, state, material)
    needed = new_locks(program, state, view, material, rw=rw)
    if not needed.is_empty():
        return WrapperOutcome(next_ctl=WAIT_LOCKS,
                              ctl_change=(ACTIVE, WAIT_LOCKS),
                              effects=[("lock_request", needed)])
    return _proper(program, tcb, state, material, rw, read_log, EMPTY_LOCKS,
                   step_index, next_ctl=ACTIVE, ctl_change=None)


def _wait_locks_step(program, tcb, state, view, seed, step_index,
                     wait_mode) -> WrapperOutcome:
    if view.granted is not None:
        material = choice_material(seed, tcb.machine_id, tcb.proper_count)
        rw, read_log = _analysis(program, state, material)
        still_needed = new_locks(program, state, view, material, rw=rw)
        effects = [("consume_granted",)]
        if not still_needed.is_empty():
            # The state moved between request and grant and the step now
            # touches unlocked locations; keep the granted locks on the undo
            # history (so backtracking releases them) and renegotiate.
            entry = HistoryEntry(saved=(), locks=view.granted,
                                 origin_step=None, ordinal=None)
            effects.append(("append_history", entry))
            return WrapperOutcome(next_ctl=ACTIVE,
                                  ctl_change=(WAIT_LOCKS, ACTIVE),
                                  effects=effects)
        out = _proper(program, tcb, state, material, rw, read_log, view.granted,
                      step_index, next_ctl=ACTIVE,
                      ctl_change=(WAIT_LOCKS, ACTIVE))
        out.effects = effects + out.effects
        return out
    if view.refused is not None:
        return WrapperOutcome(next_ctl=ACTIVE, ctl_change=(WAIT_LOCKS, ACTIVE),
                              effects=[("consume_refused",)])
    if view.victim and wait_mode == "suspend":
        # Without refusals there is no trip through "active" where
        # victimization is normally observed; withdraw the pending request so
        # no locks are granted during recovery, and wait.
        return WrapperOutcome(next_ctl=WAIT_RECOVERY,
                              ctl_change=(WAIT_LOCKS, WAIT_RECOVERY),
                              effects=[("withdraw_request",)])
    return WrapperOutcome(next_ctl=WAIT_LOCKS)


def _proper(program, tcb, state, material, rw: RwSet, read_log, lock_set: LockPair,
            step_index, next_ctl, ctl_change) -> WrapperOutcome:
    from .asm import yields  # local import to keep module deps one-way

    for l in rw.writes:
        if program.classify(l.func) == "monitored":
            raise InvalidWrite(f"{tcb.machine_id} writes monitored location {l}")
    resolver = ChoiceResolver(material)
    updates = yields(program.main_rule, state, {}, resolver, program.named_rules)
    entry = HistoryEntry(
        saved=overwritten_values(program, state, rw.writes),
        locks=lock_set,
        private_saved=_private_overwritten(program, state, rw.writes),
        origin_step=step_index,
        ordinal=tcb.proper_count,
    )
    reads = tuple(sorted(read_log.items(), key=lambda p: loc_key(p[0])))
    return WrapperOutcome(updates=updates, reads=reads, proper=True,
                          next_ctl=next_ctl, ctl_change=ctl_change,
                          effects=[("append_history", entry)])
