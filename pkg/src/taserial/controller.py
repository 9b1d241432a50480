"""Transaction controller: lock handler, commit, deadlock handler, recovery.

The controller owns the lock table, the request queues, the victim set and
the per-machine undo histories.  Each component computes one step against a
snapshot and returns effects plus trace events; the run engine applies all
effects after every agent of a global step has computed, mirroring the
synchronous-parallel step semantics of the wrapped machines.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

from .asm import AsmError, Location, Value, loc_key
from .wrapper import HistoryEntry, LockPair


class LockInvariantViolation(AsmError):
    """The two-phase-locking safety invariant failed (a bug if reachable)."""


class EmptyHistory(AsmError):
    """Undo requested for a machine with no recorded steps."""


class LockTable:
    """Read/write lock ownership per location.

    Invariant: at most one writer per location, and a location with a writer
    has no other readers.  Multiple read locks may coexist.
    """

    def __init__(self):
        self.r_locked: Dict[Location, Set[str]] = {}
        self.w_locked: Dict[Location, str] = {}

    def r_holders(self, loc: Location) -> FrozenSet[str]:
        return frozenset(self.r_locked.get(loc, ()))

    def w_holder(self, loc: Location) -> Optional[str]:
        return self.w_locked.get(loc)

    def locked_by(self, machine: str) -> FrozenSet[Location]:
        out = {l for l, ms in self.r_locked.items() if machine in ms}
        out |= {l for l, m in self.w_locked.items() if m == machine}
        return frozenset(out)

    def w_locked_by(self, machine: str) -> FrozenSet[Location]:
        return frozenset(l for l, m in self.w_locked.items() if m == machine)

    def grant(self, machine: str, locks: LockPair) -> None:
        for l in locks.r_loc:
            self.r_locked.setdefault(l, set()).add(machine)
        for l in locks.w_loc:
            self.w_locked[l] = machine

    def unlock_r(self, loc: Location, machine: str) -> None:
        holders = self.r_locked.get(loc)
        if holders is not None:
            holders.discard(machine)
            if not holders:
                del self.r_locked[loc]

    def unlock_w(self, loc: Location, machine: str) -> None:
        if self.w_locked.get(loc) == machine:
            del self.w_locked[loc]

    def release(self, machine: str, locks: LockPair) -> None:
        """Release exactly the lock kinds in the pair.

        A write lock may be an upgrade whose read lock was acquired by an
        earlier step and must survive that step's undo.
        """
        for l in locks.r_loc:
            self.unlock_r(l, machine)
        for l in locks.w_loc:
            self.unlock_w(l, machine)

    def release_all(self, machine: str) -> None:
        for l in list(self.locked_by(machine)):
            self.unlock_r(l, machine)
            self.unlock_w(l, machine)

    def check(self) -> None:
        for loc, writer in self.w_locked.items():
            readers = self.r_locked.get(loc, set())
            if readers - {writer}:
                raise LockInvariantViolation(
                    f"{loc} write-locked by {writer} but read-locked by "
                    f"{sorted(readers - {writer})}")


#: Last-request status values used for the derived wait relation.
PENDING = "pending"
REFUSED = "refused"
GRANTED = "granted"


@dataclass
class ControllerState:
    transact: Set[str] = field(default_factory=set)
    lock_requests: List[Tuple[int, str, LockPair]] = field(default_factory=list)
    next_order: int = 0
    commit_requests: Set[str] = field(default_factory=set)
    victims: Set[str] = field(default_factory=set)
    locks: LockTable = field(default_factory=LockTable)
    granted: Dict[str, LockPair] = field(default_factory=dict)
    refused: Dict[str, LockPair] = field(default_factory=dict)
    last_request: Dict[str, Tuple[LockPair, str]] = field(default_factory=dict)
    histories: Dict[str, List[HistoryEntry]] = field(default_factory=dict)

    def check_invariants(self) -> None:
        self.locks.check()
        requesters = {m for _, m, _ in self.lock_requests}
        bad = self.commit_requests & (requesters | self.victims)
        if bad:
            raise LockInvariantViolation(
                f"machines both committing and requesting/victimized: {sorted(bad)}")


def cannot_be_granted(machine: str, locks: LockPair, cs: ControllerState) -> bool:
    """True iff another active machine holds a conflicting lock.

    Conflicts: any requested location write-locked elsewhere, or a requested
    write location read-locked elsewhere.
    """
    for l in locks.all_locations():
        w = cs.locks.w_holder(l)
        if w is not None and w != machine and w in cs.transact:
            return True
    for l in locks.w_loc:
        if any(n != machine and n in cs.transact for n in cs.locks.r_holders(l)):
            return True
    return False


# ---------------------------------------------------------------------------
# Selection policies


def _sorted_requests(cs: ControllerState) -> List[Tuple[int, str, LockPair]]:
    return sorted(cs.lock_requests, key=lambda t: t[0])


def _select_random(items, rng: random.Random):
    return items[rng.randrange(len(items))]


LOCK_POLICIES = {
    "random": lambda reqs, rng: _select_random(reqs, rng),
    "fifo": lambda reqs, rng: reqs[0],
    "lowest-id": lambda reqs, rng: min(reqs, key=lambda t: t[1]),
}

COMMIT_POLICIES = {
    "random": lambda ms, rng: _select_random(sorted(ms), rng),
    "lowest-id": lambda ms, rng: min(ms),
}


def _victims_shortest_history(candidates, histories, rng):
    return [min(sorted(candidates),
                key=lambda m: (len(histories.get(m, [])), m))]


VICTIM_POLICIES = {
    "shortest-history": _victims_shortest_history,
    "random": lambda cands, hists, rng: [_select_random(sorted(cands), rng)],
}


# ---------------------------------------------------------------------------
# Component steps


def lock_handler_step(cs: ControllerState, rng: random.Random,
                      policy: str = "random", wait_mode: str = "retry"
                      ) -> Tuple[List[tuple], List[dict]]:
    """Handle one lock request: grant it or (in retry mode) refuse it."""
    reqs = _sorted_requests(cs)
    if not reqs:
        return [], []
    if wait_mode == "suspend":
        reqs = [t for t in reqs if not cannot_be_granted(t[1], t[2], cs)]
        if not reqs:
            return [], []
    order, machine, locks = LOCK_POLICIES[policy](reqs, rng)
    if cannot_be_granted(machine, locks, cs):
        return ([("refuse", order, machine, locks)],
                [{"kind": "lock_refuse", "machine": machine,
                  "locks": _lock_pair_payload(locks)}])
    return ([("grant", order, machine, locks)],
            [{"kind": "lock_grant", "machine": machine,
              "locks": _lock_pair_payload(locks)}])


def commit_step(cs: ControllerState, rng: random.Random,
                policy: str = "random") -> Tuple[List[tuple], List[dict]]:
    """Commit one requesting machine: release every lock, drop it from the
    active set."""
    if not cs.commit_requests:
        return [], []
    machine = COMMIT_POLICIES[policy](cs.commit_requests, rng)
    return [("commit", machine)], [{"kind": "commit", "machine": machine}]


def wait_edges(cs: ControllerState) -> FrozenSet[Tuple[str, str]]:
    """Derived wait relation: m waits for n when a lock m still needs is held
    conflictingly by n.

    A machine's needed locks are its last requested pair while that request
    is pending or was refused (it re-requests the same locations until
    granted, including while it waits for recovery).
    """
    edges: Set[Tuple[str, str]] = set()
    for m, (pair, status) in cs.last_request.items():
        if status not in (PENDING, REFUSED) or m not in cs.transact:
            continue
        for l in pair.all_locations():
            w = cs.locks.w_holder(l)
            if w is not None and w != m and w in cs.transact:
                edges.add((m, w))
        for l in pair.w_loc:
            for n in cs.locks.r_holders(l):
                if n != m and n in cs.transact:
                    edges.add((m, n))
    return frozenset(edges)


def deadlocked(cs: ControllerState) -> FrozenSet[str]:
    """Machines lying on a cycle of the wait relation."""
    edges = wait_edges(cs)
    succ: Dict[str, Set[str]] = {}
    for a, b in edges:
        succ.setdefault(a, set()).add(b)
    out: Set[str] = set()
    for start in succ:
        # Iterative DFS from each waiter; on a cycle iff it reaches itself.
        seen: Set[str] = set()
        stack = list(succ.get(start, ()))
        while stack:
            node = stack.pop()
            if node == start:
                out.add(start)
                break
            if node in seen:
                continue
            seen.add(node)
            stack.extend(succ.get(node, ()))
    return frozenset(out)


def deadlock_handler_step(cs: ControllerState, rng: random.Random,
                          policy: str = "shortest-history"
                          ) -> Tuple[List[tuple], List[dict]]:
    """Victimize a subset of the deadlocked, not-yet-victimized machines.

    While a victim is still being recovered its cycle partners stay
    deadlocked; victimizing them too would undo both sides and usually
    recreate the same deadlock, so no new victim is picked until the
    current ones are off every cycle."""
    dead = deadlocked(cs)
    if dead & cs.victims:
        return [], []
    candidates = dead - cs.victims
    if not candidates:
        return [], []
    chosen = VICTIM_POLICIES[policy](candidates, cs.histories, rng)
    effects = [("victimize", m) for m in sorted(chosen)]
    events = [{"kind": "victimize", "machine": m} for m in sorted(chosen)]
    return effects, events


def undo_updates(entry: HistoryEntry) -> FrozenSet[Tuple[Location, Value]]:
    """State restores for one popped history entry."""
    return frozenset(entry.saved) | frozenset(entry.private_saved)


def recovery_step(cs: ControllerState, rng: random.Random
                  ) -> Tuple[List[tuple], List[dict], FrozenSet[Tuple[Location, Value]]]:
    """Pick one victim; un-victimize it if it is no longer deadlocked, else
    undo its youngest step (restore values, release that step's locks)."""
    if not cs.victims:
        return [], [], frozenset()
    victims = sorted(cs.victims)
    machine = victims[rng.randrange(len(victims))]
    if machine not in deadlocked(cs):
        return ([("unvictimize", machine)],
                [{"kind": "recovered", "machine": machine}],
                frozenset())
    history = cs.histories.get(machine, [])
    if not history:
        raise EmptyHistory(
            f"{machine} is deadlocked with an empty history; it should hold no locks")
    entry = history[-1]
    restores = undo_updates(entry)
    payload = sorted(restores, key=lambda p: loc_key(p[0]))
    return ([("undo", machine)],
            [{"kind": "undo", "machine": machine,
              "origin_step": entry.origin_step,
              "locks": _lock_pair_payload(entry.locks),
              "restored": payload}],
            restores)


def _lock_pair_payload(locks: LockPair):
    return {"r": sorted(locks.r_loc, key=loc_key),
            "w": sorted(locks.w_loc, key=loc_key)}


# ---------------------------------------------------------------------------
# Effect application (engine calls these after the compute phase)


def apply_effect(cs: ControllerState, effect: tuple,
                 committed: List[str]) -> None:
    kind = effect[0]
    if kind == "grant":
        _, order, machine, locks = effect
        cs.lock_requests = [t for t in cs.lock_requests if t[0] != order]
        cs.locks.grant(machine, locks)
        cs.granted[machine] = locks
        cs.last_request[machine] = (locks, GRANTED)
    elif kind == "refuse":
        _, order, machine, locks = effect
        cs.lock_requests = [t for t in cs.lock_requests if t[0] != order]
        cs.refused[machine] = locks
        cs.last_request[machine] = (locks, REFUSED)
    elif kind == "commit":
        machine = effect[1]
        cs.locks.release_all(machine)
        cs.commit_requests.discard(machine)
        cs.transact.discard(machine)
        cs.last_request.pop(machine, None)
        committed.append(machine)
    elif kind == "victimize":
        cs.victims.add(effect[1])
    elif kind == "unvictimize":
        cs.victims.discard(effect[1])
    elif kind == "undo":
        machine = effect[1]
        history = cs.histories[machine]
        if not history:
            raise EmptyHistory(machine)
        entry = history.pop()
        cs.locks.release(machine, entry.locks)
    else:
        raise ValueError(f"unknown controller effect {effect!r}")
