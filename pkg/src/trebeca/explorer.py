"""Bounded exhaustive exploration of the system transition graph.

At every state the explorer branches on each message carrying the minimal
time tag and, per message, on every nondeterministic-choice vector its
method body can take. States deduplicate by a canonical serialization, so
the result is a graph rather than a tree; simulation traces are paths in
that graph.
"""
from __future__ import annotations

import json
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from .interp import ExecError, FixedResolver, PrefixResolver
from .model import (
    EV_ENDED,
    Message,
    SystemState,
    TraceEvent,
    canon_value,
)
from .parser import CheckedModel
from .scheduler import (
    CHECK_LITERAL,
    END_EMPTY,
    END_EXPIRED,
    END_HORIZON,
    END_MAX_STEPS,
    END_PARTIAL,
    Trace,
    build_initial_state,
    execute_selected,
    min_tt_candidates,
    normalize_env_bindings,
    purge_expired,
)

END_TRUNCATED = "truncated"

# Canonical identity of a message, JSON-friendly: the explorer's decisions
# and the trace's msg_selected events both reduce to this.
MessageKey = tuple  # (tt, receiver, method, (args...), sender, dl)


def message_key(msg: Message) -> MessageKey:
    return (
        msg.tt.ticks, msg.receiver, msg.method,
        tuple(canon_value(a) for a in msg.args), msg.sender, str(msg.dl),
    )


def event_message_key(ev: TraceEvent) -> MessageKey:
    return (ev.tt, ev.rebec, ev.method, tuple(ev.args), ev.sender, ev.dl)


@dataclass(frozen=True)
class Decision:
    """What one scheduler step decided: which message, and which index each
    nondeterministic-choice site took while the method ran."""

    message: MessageKey
    choices: tuple[tuple[str, int, int], ...] = ()


def trace_decisions(trace: Trace) -> list[Decision]:
    """Recover the decision path a simulation took from its trace."""
    return [
        Decision(message=event_message_key(ev), choices=tuple(ev.choices))
        for ev in trace.selected()
    ]


def state_key(state: SystemState) -> str:
    """Canonical serialization: equal keys iff structurally equal states.

    Rebec ids are assigned deterministically by creation order, so the fresh
    counter is implied by the live rebecs and stays out of the key.
    """
    parts = []
    for rid in sorted(state.envs):
        env = state.envs[rid]
        decls = state.checked.classes[env.class_name].definition.state_decls
        svs = ",".join(f"{d.name}={canon_value(env.state_vars[d.name])}" for d in decls)
        kns = ",".join(f"{k}=@{v.rebec_id}" for k, v in sorted(env.knowns.items()))
        parts.append(f"{rid}:{env.class_name}:{env.now.ticks}:{svs}:{kns}")
    bag = ";".join(
        f"{m.tt.ticks}>{m.receiver}.{m.method}({','.join(canon_value(a) for a in m.args)})"
        f"<{m.sender}!{m.dl}"
        for m in state.sorted_bag()
    )
    return "|".join(parts) + "#" + bag


@dataclass
class ExploreBounds:
    horizon: Optional[int] = None
    max_steps: Optional[int] = None
    max_states: Optional[int] = None

    def require_bound(self) -> None:
        if self.horizon is None and self.max_steps is None and self.max_states is None:
            raise ValueError("exploration needs a horizon, max-steps or max-states bound")


@dataclass
class Edge:
    src: int
    dst: int
    decision: Decision
    time: int  # execution time of the step
    events: tuple[TraceEvent, ...]


@dataclass
class Node:
    key: str
    depth: int
    terminal: Optional[str] = None  # reason, for states with no outgoing edges
    terminal_events: tuple[TraceEvent, ...] = ()
    earliest_time: int = 0


@dataclass
class ErrorBranch:
    src: int
    decision: Decision
    message: str


@dataclass
class ExploreResult:
    checked: CheckedModel
    env_bindings: dict
    bounds: ExploreBounds
    deadline_check: str
    nodes: list[Node]
    edges: list[Edge]
    root_events: tuple[TraceEvent, ...]
    truncated: bool
    error_branches: list[ErrorBranch] = field(default_factory=list)

    @property
    def root(self) -> int:
        return 0

    def key_set(self) -> set[str]:
        return {n.key for n in self.nodes}

    def terminals(self) -> list[tuple[int, str]]:
        return [(i, n.terminal) for i, n in enumerate(self.nodes) if n.terminal]

    def out_edges(self) -> dict[int, list[Edge]]:
        out: dict[int, list[Edge]] = {i: [] for i in range(len(self.nodes))}
        for e in self.edges:
            out[e.src].append(e)
        return out

    def to_json(self) -> str:
        doc = {
            "root": 0,
            "truncated": self.truncated,
            "bounds": {
                "horizon": self.bounds.horizon,
                "max_steps": self.bounds.max_steps,
                "max_states": self.bounds.max_states,
            },
            "nodes": [
                {
                    "id": i,
                    "key": n.key,
                    "depth": n.depth,
                    "earliest_time": n.earliest_time,
                    "terminal": n.terminal,
                }
                for i, n in enumerate(self.nodes)
            ],
            "edges": [
                {
                    "src": e.src,
                    "dst": e.dst,
                    "time": e.time,
                    "message": list(e.decision.message[:3])
                    + [list(e.decision.message[3])]
                    + list(e.decision.message[4:]),
                    "choices": [list(c) for c in e.decision.choices],
                }
                for e in self.edges
            ],
        }
        return json.dumps(doc, indent=2) + "\n"

    def to_dot(self) -> str:
        lines = ["digraph exploration {"]
        for i, n in enumerate(self.nodes):
            shape = "doublecircle" if n.terminal else "circle"
            label = f"{i}" + (f"\\n{n.terminal}" if n.terminal else "")
            lines.append(f'  n{i} [shape={shape}, label="{label}"];')
        for e in self.edges:
            tt, receiver, method = e.decision.message[:3]
            lines.append(f'  n{e.src} -> n{e.dst} [label="{receiver}.{method}@{tt}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


class StalePathError(Exception):
    """A decision path no longer matches the graph (model or bindings changed)."""


def _enumerate_decisions(base: SystemState, msg: Message):
    """Run ``msg``'s method under every nondeterministic-choice vector.

    Yields (decision, state-after, step-events) per vector, and
    (decision, None, error-text) for vectors whose execution faults.
    """
    pending: list[list[int]] = [[]]
    while pending:
        prefix = pending.pop()
        work = base.clone()
        resolver = PrefixResolver(prefix)
        error: Optional[str] = None
        try:
            exec_events, selected_event = execute_selected(work, msg, resolver)
        except ExecError as exc:
            error = str(exc)
        taken = resolver.taken
        # Queue the unexplored siblings of every choice made past the prefix.
        for p in range(len(prefix), len(taken)):
            _site, arity, idx = taken[p]
            for alt in range(idx + 1, arity):
                pending.append([t[2] for t in taken[:p]] + [alt])
        decision = Decision(message=message_key(msg), choices=tuple(taken))
        if error is not None:
            yield decision, None, error
        else:
            yield decision, work, [selected_event] + exec_events


def explore(checked: CheckedModel, env_bindings: dict, bounds: ExploreBounds,
            deadline_check: str = CHECK_LITERAL, workers: int = 1,
            stop_on: Optional[Callable[[TraceEvent], bool]] = None,
            order: str = "bfs",
            guide: Optional[list[Decision]] = None,
            _tie_permute: Optional[Callable[[list], list]] = None) -> ExploreResult:
    """Enumerate every reachable state within the bounds.

    ``stop_on`` cuts the search as soon as an edge emits a matching event
    (useful for pure existence checks; the result is marked truncated).
    ``order`` picks frontier discipline: bfs explores by depth, dfs dives.
    ``guide`` restricts expansion to the states along one decision path
    (plus their one-step fringe): a cheap way to certify a witness found by
    simulation inside a sound, truncation-flagged subgraph.
    The reachable key set is independent of tie enumeration order and of
    ``workers`` whenever no bound is hit.
    """
    bounds.require_bound()
    bindings = normalize_env_bindings(checked, env_bindings)
    root_state, root_events = build_initial_state(checked, bindings)

    lock = threading.Lock()
    keys: dict[str, int] = {}
    nodes: list[Node] = []
    states: dict[int, SystemState] = {}
    edges: list[Edge] = []
    error_branches: list[ErrorBranch] = []
    truncated = [False]
    stop_hit = [False]

    def intern_state(st: SystemState, depth: int) -> tuple[int, bool]:
        key = state_key(st)
        with lock:
            nid = keys.get(key)
            if nid is not None:
                if depth < nodes[nid].depth:
                    nodes[nid].depth = depth
                return nid, False
            nid = len(nodes)
            keys[key] = nid
            nodes.append(Node(key=key, depth=depth))
            states[nid] = st
            return nid, True

    root_id, _ = intern_state(root_state, 0)
    frontier: deque[int] = deque([root_id])

    def expand(nid: int) -> None:
        with lock:
            state = states.pop(nid)
            depth = nodes[nid].depth
        if bounds.max_steps is not None and depth >= bounds.max_steps:
            with lock:
                nodes[nid].terminal = END_MAX_STEPS
                truncated[0] = True
            return
        if not state.bag:
            with lock:
                nodes[nid].terminal = END_EMPTY
            return
        work = state.clone()
        purge_events = purge_expired(work, deadline_check)
        if not work.bag:
            with lock:
                nodes[nid].terminal = END_EXPIRED
                nodes[nid].terminal_events = tuple(purge_events)
            return
        candidates = min_tt_candidates(work)
        if bounds.horizon is not None and candidates[0].tt.ticks > bounds.horizon:
            with lock:
                nodes[nid].terminal = END_HORIZON
                nodes[nid].terminal_events = tuple(purge_events)
                truncated[0] = True
            return
        if _tie_permute is not None:
            candidates = _tie_permute(list(candidates))
        new_frontier: list[int] = []
        for msg in candidates:
            for decision, result_state, payload in _enumerate_decisions(work, msg):
                if result_state is None:
                    with lock:
                        error_branches.append(ErrorBranch(nid, decision, payload))
                    continue
                step_events = purge_events + payload
                dst, fresh = intern_state(result_state, depth + 1)
                edge = Edge(src=nid, dst=dst, decision=decision,
                            time=payload[0].time, events=tuple(step_events))
                with lock:
                    edges.append(edge)
                if fresh:
                    new_frontier.append(dst)
                if stop_on is not None and any(stop_on(ev) for ev in step_events):
                    stop_hit[0] = True
        with lock:
            frontier.extend(new_frontier)

    def over_budget() -> bool:
        return bounds.max_states is not None and len(nodes) >= bounds.max_states

    if guide is not None:
        cur = root_id
        for decision in guide:
            if stop_hit[0] or over_budget():
                break
            if cur in states:
                expand(cur)
            nxt = next((e.dst for e in edges if e.src == cur and e.decision == decision),
                       None)
            if nxt is None:
                raise StalePathError(f"guide decision not available: {decision}")
            cur = nxt
        if cur in states and not stop_hit[0]:
            expand(cur)
        frontier.clear()
    else:
        pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        try:
            while frontier:
                if stop_hit[0] or over_budget():
                    truncated[0] = True
                    while frontier:
                        nid = frontier.popleft()
                        if nid in states:
                            nodes[nid].terminal = END_TRUNCATED
                            states.pop(nid, None)
                    break
                if pool is None:
                    nid = frontier.popleft() if order == "bfs" else frontier.pop()
                    expand(nid)
                else:
                    batch = []
                    while frontier and len(batch) < workers * 4:
                        batch.append(frontier.popleft())
                    list(pool.map(expand, batch))
        finally:
            if pool is not None:
                pool.shutdown(wait=True)

    # Unexpanded leftovers (dfs stop, exact budget hits) become truncated terminals.
    for nid in list(states):
        nodes[nid].terminal = END_TRUNCATED
        truncated[0] = True
        states.pop(nid, None)

    result = ExploreResult(
        checked=checked, env_bindings=dict(env_bindings), bounds=bounds,
        deadline_check=deadline_check, nodes=nodes, edges=edges,
        root_events=tuple(root_events), truncated=truncated[0],
        error_branches=error_branches,
    )
    _canonicalize(result)
    return result


def _canonicalize(result: ExploreResult) -> None:
    """Renumber nodes as (depth, key) and sort edges so the result is
    byte-identical however the frontier was scheduled."""
    order = sorted(range(len(result.nodes)),
                   key=lambda i: (result.nodes[i].depth, result.nodes[i].key))
    # Root keeps id 0: it is the unique depth-0 node.
    remap = {old: new for new, old in enumerate(order)}
    result.nodes = [result.nodes[old] for old in order]
    for e in result.edges:
        e.src = remap[e.src]
        e.dst = remap[e.dst]
    for b in result.error_branches:
        b.src = remap[b.src]
    result.edges.sort(key=lambda e: (e.src, e.decision.message, e.decision.choices, e.dst))
    result.error_branches.sort(key=lambda b: (b.src, b.decision.message, b.decision.choices))
    # Earliest logical time each state is reachable at: min over incoming steps.
    earliest = [None] * len(result.nodes)
    earliest[0] = 0
    for e in result.edges:
        if earliest[e.dst] is None or e.time < earliest[e.dst]:
            earliest[e.dst] = e.time
    for i, n in enumerate(result.nodes):
        n.earliest_time = earliest[i] if earliest[i] is not None else 0


def follow(result: ExploreResult, path: list[Decision]) -> int:
    """Walk a decision path through the graph's edges; returns the final
    node id. Raises StalePathError when a decision has no matching edge."""
    by_src: dict[tuple[int, Decision], int] = {}
    for e in result.edges:
        by_src[(e.src, e.decision)] = e.dst
    node = result.root
    for decision in path:
        nxt = by_src.get((node, decision))
        if nxt is None:
            raise StalePathError(f"no edge from node {node} for {decision}")
        node = nxt
    return node


# ---------------------------------------------------------------------------
# Replay


def replay(result: ExploreResult, path: list[Decision]) -> Trace:
    """Re-execute a decision path from the initial state.

    The final run_ended reason reflects what the scheduler would do next
    under the result's bounds: a path ending where the bag is empty ends
    the same way a simulation would, anything else is marked partial.
    """
    bindings = normalize_env_bindings(result.checked, result.env_bindings)
    state, init_events = build_initial_state(result.checked, bindings)
    trace = Trace(events=list(init_events))
    last_time = 0
    for decision in path:
        purge_events = purge_expired(state, result.deadline_check)
        candidates = {message_key(m): m for m in min_tt_candidates(state)}
        msg = candidates.get(decision.message)
        if msg is None:
            raise StalePathError(f"no eligible message matches {decision.message}")
        resolver = FixedResolver(decision.choices)
        try:
            exec_events, selected_event = execute_selected(state, msg, resolver)
        except ExecError as exc:
            raise StalePathError(f"stale decision vector: {exc}") from exc
        trace.append(*purge_events, selected_event, *exec_events)
        last_time = trace.events[-1].time
    reason, end_events, end_time = _termination_status(state, result, last_time)
    trace.append(*end_events)
    trace.append(TraceEvent(kind=EV_ENDED, time=end_time, reason=reason))
    return trace


def _termination_status(state: SystemState, result: ExploreResult, last_time: int):
    if not state.bag:
        return END_EMPTY, [], last_time
    probe = state.clone()
    purge_events = purge_expired(probe, result.deadline_check)
    if not probe.bag:
        return END_EXPIRED, purge_events, (purge_events[-1].time if purge_events else last_time)
    horizon = result.bounds.horizon
    if horizon is not None and min(m.tt.ticks for m in probe.bag) > horizon:
        return END_HORIZON, purge_events, horizon
    return END_PARTIAL, [], last_time
