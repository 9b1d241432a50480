"""A forged trace exhibiting a lost update.

Two machines each increment the same shared cell once.  The forged trace
splices their solo schedules together but claims both read the original
value, so one increment is lost.  No serial order reproduces those reads,
which makes this a fixed negative fixture for the serializability checkers.
"""
from __future__ import annotations

from .dsl import parse_program
from .engine import RunConfig, StepRecord, Trace, run

_INC = """\
machine {name}
shared cell
init cell() := 0
init pc_{name}() := 0
terminated: pc_{name}() = 1
rule: par {{ pc_{name}() := pc_{name}() + 1 ; cell() := cell() + 1 }}
"""


def lost_update_config(seed: int = 7) -> RunConfig:
    machines = [parse_program(_INC.format(name=n)) for n in ("a", "b")]
    return RunConfig(machines=machines, seed=seed, max_steps=60)


def forged_lost_update_trace(seed: int = 7) -> Trace:
    """Both machines' recorded steps read cell() = 0 and write cell() = 1."""
    config = lost_update_config(seed)
    solo_a = run(config, only=["a"])
    solo_b = run(config, only=["b"])  # also from cell = 0: the forgery
    assert solo_a.status == "done" and solo_b.status == "done"
    steps = []
    for solo in (solo_a, solo_b):
        for rec in solo.steps:
            steps.append(StepRecord(
                index=len(steps),
                per_machine=dict(rec.per_machine),
                events=[dict(ev) for ev in rec.events],
                state_hash=rec.state_hash,
            ))
    return Trace(
        config=config,
        seed=seed,
        initial_values=dict(solo_a.initial_values),
        steps=steps,
        final_values=dict(solo_b.final_values),
        status="done",
        committed=["a", "b"],
        registered=["a", "b"],
    )
