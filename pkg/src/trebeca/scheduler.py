"""Message selection and the top-level simulation loop.

Each step purges expired messages, picks one of the messages carrying the
globally smallest time tag, and executes the corresponding method to
completion. Ties between equal time tags are genuine nondeterminism: the
simulator resolves them with a seeded resolver, the explorer branches.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Optional

from .interp import (
    ChoiceResolver,
    RandomResolver,
    RecordingResolver,
    exec_method,
    make_rebec_env,
)
from .model import (
    BoolLit,
    BoolV,
    Deadline,
    EV_CREATED,
    EV_ENDED,
    EV_PURGED,
    EV_SELECTED,
    EV_SENT,
    EXTERNAL_ID,
    IntLit,
    IntV,
    Message,
    RebecRef,
    SystemState,
    T0,
    TimeV,
    TraceEvent,
    UnaryOp,
    Value,
    VarRef,
    canon_value,
    coerce_value,
)
from .parser import CheckedModel

TIE_SEEDED = "seeded-uniform"
TIE_FIXED = "fixed-order"
TIE_EXPLORER = "controlled-by-explorer"

CHECK_LITERAL = "literal"
CHECK_EFFECTIVE = "effective"

# Termination reasons. The first two end a run for good; the others mean the
# run was cut short and more behaviour exists beyond the bound.
END_EMPTY = "empty-bag"
END_EXPIRED = "all-expired"
END_HORIZON = "horizon"
END_MAX_STEPS = "max-steps"
END_PARTIAL = "partial"
TRUNCATED_REASONS = frozenset({END_HORIZON, END_MAX_STEPS, END_PARTIAL, "truncated"})


@dataclass
class SchedulePolicy:
    tie_break: str = TIE_SEEDED
    deadline_check: str = CHECK_LITERAL
    horizon: Optional[int] = None
    max_steps: Optional[int] = None

    def require_bound(self) -> None:
        if self.horizon is None and self.max_steps is None:
            raise ValueError("a run needs a horizon or a max-steps bound")


@dataclass
class Trace:
    events: list[TraceEvent] = field(default_factory=list)

    def append(self, *events: TraceEvent) -> None:
        self.events.extend(events)

    @property
    def end_reason(self) -> Optional[str]:
        for ev in reversed(self.events):
            if ev.kind == EV_ENDED:
                return ev.reason
        return None

    @property
    def truncated(self) -> bool:
        return self.end_reason in TRUNCATED_REASONS

    def selected(self) -> list[TraceEvent]:
        return [ev for ev in self.events if ev.kind == EV_SELECTED]

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(_event_record(step, ev), separators=(",", ":")) + "\n"
            for step, ev in enumerate(self.events)
        )


def _event_record(step: int, ev: TraceEvent) -> dict:
    record = {
        "step": step,
        "kind": ev.kind,
        "time": ev.time,
        "rebec": ev.rebec,
        "method": ev.method,
        "sender": ev.sender,
        "tt": ev.tt,
        "dl": ev.dl,
    }
    if ev.kind == EV_ENDED:
        record["reason"] = ev.reason
    return record


# ---------------------------------------------------------------------------
# Message eligibility and purging


def eligible(msg: Message, state: SystemState, mode: str = CHECK_LITERAL) -> bool:
    """Whether the message may still be served.

    ``literal`` keeps the side condition exactly as the rule states it
    (receiver clock <= deadline); ``effective`` also rejects messages whose
    time tag alone is already past the deadline.
    """
    receiver = state.envs[msg.receiver]
    if mode == CHECK_LITERAL:
        return not msg.dl.expired_at(receiver.now)
    if mode == CHECK_EFFECTIVE:
        return not msg.dl.expired_at(max(msg.tt, receiver.now))
    raise ValueError(f"unknown deadline check mode {mode!r}")


def purge_expired(state: SystemState, mode: str) -> list[TraceEvent]:
    """Drop every ineligible message, in canonical bag order."""
    events: list[TraceEvent] = []
    keep: list[Message] = []
    expired = []
    for msg in state.bag:
        (keep if eligible(msg, state, mode) else expired).append(msg)
    for msg in sorted(expired, key=Message.sort_key):
        receiver = state.envs[msg.receiver]
        events.append(TraceEvent(
            kind=EV_PURGED, time=receiver.now.ticks, rebec=msg.receiver,
            method=msg.method, sender=msg.sender, tt=msg.tt.ticks, dl=str(msg.dl),
            args=tuple(canon_value(a) for a in msg.args),
        ))
    state.bag = keep
    return events


def min_tt_candidates(state: SystemState) -> list[Message]:
    """Distinct messages carrying the smallest time tag, canonically ordered.

    Identical duplicates collapse: serving either copy of an equal message
    is the same transition.
    """
    if not state.bag:
        return []
    lowest = min(msg.tt for msg in state.bag)
    seen = set()
    out = []
    for msg in sorted((m for m in state.bag if m.tt == lowest), key=Message.sort_key):
        if msg not in seen:
            seen.add(msg)
            out.append(msg)
    return out


@dataclass
class StepOutcome:
    events: list[TraceEvent]
    reason: Optional[str] = None  # set when the step terminated the run
    selected: Optional[Message] = None

    @property
    def terminated(self) -> bool:
        return self.reason is not None


def scheduler_step(state: SystemState, policy: SchedulePolicy,
                   resolver: ChoiceResolver) -> StepOutcome:
    """One system transition, mutating ``state``; the caller owns the state."""
    if not state.bag:
        return StepOutcome(events=[], reason=END_EMPTY)
    events = purge_expired(state, policy.deadline_check)
    if not state.bag:
        return StepOutcome(events=events, reason=END_EXPIRED)

    candidates = min_tt_candidates(state)
    if policy.horizon is not None and candidates[0].tt.ticks > policy.horizon:
        return StepOutcome(events=events, reason=END_HORIZON)

    if len(candidates) == 1 or policy.tie_break == TIE_FIXED:
        msg = candidates[0]
    elif policy.tie_break == TIE_SEEDED:
        msg = candidates[resolver.choose("scheduler-tie", len(candidates))]
    else:
        raise ValueError(f"tie break {policy.tie_break!r} cannot run standalone")

    recorder = RecordingResolver(resolver)
    events_after, selected_event = execute_selected(state, msg, recorder)
    return StepOutcome(events=events + [selected_event] + events_after, selected=msg)


def execute_selected(state: SystemState, msg: Message,
                     recorder: RecordingResolver) -> tuple[list[TraceEvent], TraceEvent]:
    """Remove ``msg`` from the bag and run its method; shared by simulator,
    explorer and replay so their traces agree byte for byte."""
    state.bag.remove(msg)
    receiver = state.envs[msg.receiver]
    exec_time = max(msg.tt, receiver.now)
    exec_events = exec_method(msg, state, recorder)
    selected_event = TraceEvent(
        kind=EV_SELECTED, time=exec_time.ticks, rebec=msg.receiver,
        method=msg.method, sender=msg.sender, tt=msg.tt.ticks, dl=str(msg.dl),
        args=tuple(canon_value(a) for a in msg.args),
        choices=tuple(recorder.taken),
    )
    return exec_events, selected_event


# ---------------------------------------------------------------------------
# Initial state and the full run


def normalize_env_bindings(checked: CheckedModel, raw: dict) -> dict[str, Value]:
    """Coerce plain ints/bools into Values and check the binding is total."""
    bindings: dict[str, Value] = {}
    unknown = [name for name in raw if name not in checked.env_types]
    if unknown:
        raise ValueError(f"unknown env variable(s): {', '.join(sorted(unknown))}")
    missing = [name for name in checked.env_types if name not in raw]
    if missing:
        raise ValueError(f"missing env binding(s): {', '.join(sorted(missing))}")
    for name, value in raw.items():
        expected = checked.env_types[name]
        if isinstance(value, bool):
            value = BoolV(value)
        elif isinstance(value, int):
            value = IntV(value)
        if expected == "boolean" and not isinstance(value, BoolV):
            raise ValueError(f"env variable {name!r} must be boolean")
        if expected == "int" and not isinstance(value, (IntV, TimeV)):
            raise ValueError(f"env variable {name!r} must be an integer")
        bindings[name] = coerce_value(value, expected)
    return bindings


def _init_arg_value(expr, bindings: dict[str, Value]) -> Value:
    if isinstance(expr, IntLit):
        return IntV(expr.value)
    if isinstance(expr, BoolLit):
        return BoolV(expr.value)
    if isinstance(expr, UnaryOp) and isinstance(expr.operand, IntLit):
        return IntV(-expr.operand.value)
    if isinstance(expr, VarRef):
        return bindings[expr.name]
    raise ValueError(f"unsupported state initializer {expr!r}")


def build_initial_state(checked: CheckedModel,
                        env_bindings: dict[str, Value]) -> tuple[SystemState, list[TraceEvent]]:
    """Instantiate the main block: every rebec starts at time 0 with its
    initial message queued at time tag 0 and no deadline."""
    state = SystemState(checked, env_bindings)
    events: list[TraceEvent] = []
    for inst in checked.model.main:
        info = checked.classes[inst.class_name]
        env = make_rebec_env(inst.name, info, now=T0)
        for decl, arg in zip(info.definition.known_decls, inst.known_args):
            env.knowns[decl.name] = RebecRef(arg)
        for decl, arg in zip(info.definition.state_decls, inst.init_args):
            env.state_vars[decl.name] = coerce_value(
                _init_arg_value(arg, env_bindings), decl.type)
        state.envs[inst.name] = env
        events.append(TraceEvent(
            kind=EV_CREATED, time=0, rebec=inst.name, sender=EXTERNAL_ID,
        ))
    for inst in checked.model.main:
        msg = Message(receiver=inst.name, method="initial", args=(),
                      sender=EXTERNAL_ID, tt=T0, dl=Deadline.infinite())
        state.bag.append(msg)
        events.append(TraceEvent(
            kind=EV_SENT, time=0, rebec=inst.name, method="initial",
            sender=EXTERNAL_ID, tt=0, dl="inf",
        ))
    return state, events


def run(checked: CheckedModel, env_bindings: dict, seed: int,
        policy: SchedulePolicy) -> Trace:
    """Simulate from the initial state until the policy ends the run.

    A pure function of its arguments: the same model, bindings, seed and
    policy give an identical trace.
    """
    policy.require_bound()
    bindings = normalize_env_bindings(checked, env_bindings)
    state, init_events = build_initial_state(checked, bindings)
    trace = Trace(events=list(init_events))
    resolver = RandomResolver(random.Random(seed))
    steps = 0
    last_time = 0
    while True:
        if policy.max_steps is not None and steps >= policy.max_steps:
            trace.append(TraceEvent(kind=EV_ENDED, time=last_time, reason=END_MAX_STEPS))
            return trace
        outcome = scheduler_step(state, policy, resolver)
        trace.append(*outcome.events)
        if outcome.events:
            last_time = outcome.events[-1].time
        if outcome.terminated:
            # A horizon cut is stamped with the bound itself so monitors can
            # tell how far the run definitely looked.
            end_time = policy.horizon if outcome.reason == END_HORIZON else last_time
            trace.append(TraceEvent(kind=EV_ENDED, time=end_time, reason=outcome.reason))
            return trace
        steps += 1
