"""Read and write locations of terms, formulae and rules.

Computed by structural induction in a given state: guards are evaluated to
follow the taken branch, quantifier reads union over the whole domain, and
sequential composition analyses its second rule in the intermediate state.
The analysis is an implementation independent of asm.yields; when both
consume a choice resolver built from the same material they agree on every
choose witness, and the instrumented-execution tests cross-check the two.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, Optional, Set, Tuple

from .asm import (
    And,
    Apply,
    Assign,
    Atom,
    Call,
    ChooseDo,
    Env,
    Eq,
    EvalError,
    Exists,
    Forall,
    ForallDo,
    Formula,
    If,
    Let,
    Location,
    Lt,
    NamedRule,
    Not,
    Or,
    Par,
    Rule,
    Seq,
    Skip,
    State,
    Term,
    TypeMismatch,
    UNDEF,
    UpdateSet,
    Value,
    Var,
    consistent,
    expand_call,
    is_static,
    make_location,
    seq_merge,
    static_apply,
    values_equal,
)


@dataclass(frozen=True)
class RwSet:
    reads: FrozenSet[Location]
    writes: FrozenSet[Location]


ReadLog = Dict[Location, Value]


class _Walker:
    """Single traversal accumulating reads (with values) and writes.

    The seq case needs the first rule's update set, so the walk also computes
    updates inline; this keeps each choose node's occurrence sequence aligned
    with a plain execution of the same rule.
    """

    def __init__(self, resolver, rules: Optional[Dict[str, NamedRule]],
                 read_log: Optional[ReadLog]):
        self.resolver = resolver
        self.rules = rules or {}
        self.reads: Set[Location] = set()
        self.read_log = read_log

    def note(self, loc: Location, state: State) -> None:
        self.reads.add(loc)
        if self.read_log is not None and loc not in self.read_log:
            self.read_log[loc] = state.get(loc)

    # -- terms ------------------------------------------------------------

    def term(self, t: Term, state: State, env: Env) -> Tuple[Value, Optional[Location]]:
        """Evaluate t, noting reads; returns (value, head location or None)."""
        if isinstance(t, Var):
            try:
                return env[t.name], None
            except KeyError:
                raise EvalError(f"unbound variable {t.name}") from None
        vals = tuple(self.term(a, state, env)[0] for a in t.args)
        if is_static(t.func):
            return static_apply(t.func, vals), None
        loc = make_location(t.func, vals)
        self.note(loc, state)
        return state.get(loc), loc

    # -- formulae ---------------------------------------------------------

    def formula(self, f: Formula, state: State, env: Env) -> bool:
        if isinstance(f, Atom):
            vals = tuple(self.term(a, state, env)[0] for a in f.args)
            loc = make_location(f.pred, vals)
            self.note(loc, state)
            v = state.get(loc)
            if v is True or v is False:
                return v
            if v is UNDEF:
                return False
            raise TypeMismatch(f"atom {f.pred} holds non-boolean {v!r}")
        if isinstance(f, Not):
            return not self.formula(f.sub, state, env)
        if isinstance(f, And):
            a = self.formula(f.left, state, env)
            b = self.formula(f.right, state, env)
            return a and b
        if isinstance(f, Or):
            a = self.formula(f.left, state, env)
            b = self.formula(f.right, state, env)
            return a or b
        if isinstance(f, Eq):
            return values_equal(self.term(f.left, state, env)[0],
                                self.term(f.right, state, env)[0])
        if isinstance(f, Lt):
            a = self.term(f.left, state, env)[0]
            b = self.term(f.right, state, env)[0]
            for v in (a, b):
                if not isinstance(v, int) or isinstance(v, bool):
                    raise TypeMismatch(f"< needs integers, got {v!r}")
            return a < b
        if isinstance(f, (Forall, Exists)):
            results = [self.formula(f.body, state, {**env, f.var: d})
                       for d in state.domain]
            return all(results) if isinstance(f, Forall) else any(results)
        raise TypeError(f"not a formula: {f!r}")

    def quantified_range(self, var: str, guard: Formula, state: State,
                         env: Env) -> list:
        """Guard-satisfying domain elements; reads the guard over the whole
        domain, like the quantified-formula case."""
        out = []
        for d in state.domain:
            if self.formula(guard, state, {**env, var: d}):
                out.append(d)
        return out

    # -- rules ------------------------------------------------------------

    def rule(self, r: Rule, state: State, env: Env) -> Tuple[Set[Location], UpdateSet]:
        if isinstance(r, Skip):
            return set(), frozenset()
        if isinstance(r, Assign):
            if not isinstance(r.lhs, Apply) or is_static(r.lhs.func):
                raise EvalError(f"assignment target must be a dynamic function: {r.lhs!r}")
            _, head = self.term(r.lhs, state, env)
            val, _ = self.term(r.rhs, state, env)
            assert head is not None
            return {head}, frozenset({(head, val)})
        if isinstance(r, If):
            branch = r.then if self.formula(r.guard, state, env) else r.orelse
            return self.rule(branch, state, env)
        if isinstance(r, Let):
            v, _ = self.term(r.bind, state, env)
            return self.rule(r.body, state, {**env, r.var: v})
        if isinstance(r, ForallDo):
            writes: Set[Location] = set()
            updates: Set = set()
            for d in self.quantified_range(r.var, r.guard, state, env):
                w, u = self.rule(r.body, state, {**env, r.var: d})
                writes |= w
                updates |= u
            return writes, frozenset(updates)
        if isinstance(r, ChooseDo):
            rng = self.quantified_range(r.var, r.guard, state, env)
            if not rng:
                return set(), frozenset()
            witness = rng[self.resolver.pick(r.node_id, len(rng))]
            return self.rule(r.body, state, {**env, r.var: witness})
        if isinstance(r, Par):
            w1, u1 = self.rule(r.left, state, env)
            w2, u2 = self.rule(r.right, state, env)
            return w1 | w2, u1 | u2
        if isinstance(r, Seq):
            w1, u1 = self.rule(r.first, state, env)
            if not consistent(u1):
                return w1, u1
            w2, u2 = self.rule(r.second, state.with_updates(u1), env)
            return w1 | w2, seq_merge(u1, u2)
        if isinstance(r, Call):
            return self.rule(expand_call(r, self.rules), state, env)
        raise TypeError(f"not a rule: {r!r}")


def rw_term(t: Term, state: State, env: Env,
            read_log: Optional[ReadLog] = None) -> RwSet:
    """Read locations of a term; its write location is the head application."""
    w = _Walker(None, None, read_log)
    _, head = w.term(t, state, env)
    writes = frozenset() if head is None else frozenset({head})
    return RwSet(frozenset(w.reads), writes)


def rw_formula(f: Formula, state: State, env: Env,
               read_log: Optional[ReadLog] = None) -> RwSet:
    """Read locations of a formula; formulae have no write locations."""
    w = _Walker(None, None, read_log)
    w.formula(f, state, env)
    return RwSet(frozenset(w.reads), frozenset())


def rw_rule(r: Rule, state: State, env: Env, resolver,
            rules: Optional[Dict[str, NamedRule]] = None,
            read_log: Optional[ReadLog] = None) -> RwSet:
    """Read and write locations of one step of rule r in the given state."""
    w = _Walker(resolver, rules, read_log)
    writes, _ = w.rule(r, state, env)
    return RwSet(frozenset(w.reads), frozenset(writes))
