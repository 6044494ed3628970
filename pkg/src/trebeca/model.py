"""Core data model for Timed Rebeca.

Everything the other modules share lives here: logical time, deadlines,
the syntax tree produced by the parser, runtime values, messages, rebec
environments, whole-system states, trace events, and the canonical
pretty-printer used by round-trip tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import total_ordering
from typing import Optional, Union

# Reserved rebec id used as the sender of messages that originate from the
# main block rather than from a running rebec.
EXTERNAL_ID = "external"

MAX_TICKS = 2**63 - 1


class TimeOverflowError(ArithmeticError):
    """Raised when logical-time arithmetic leaves [0, MAX_TICKS]."""


@total_ordering
@dataclass(frozen=True)
class TimeValue:
    """A point on a rebec's logical clock, in whole ticks."""

    ticks: int

    def __post_init__(self) -> None:
        if self.ticks < 0:
            raise TimeOverflowError(f"negative time value: {self.ticks}")
        if self.ticks > MAX_TICKS:
            raise TimeOverflowError(f"time value above MAX_TICKS: {self.ticks}")

    def advanced(self, amount: int) -> "TimeValue":
        if amount < 0:
            raise TimeOverflowError(f"cannot advance time by {amount}")
        ticks = self.ticks + amount
        if ticks > MAX_TICKS:
            raise TimeOverflowError("time value overflow")
        return TimeValue(ticks)

    def __lt__(self, other: "TimeValue") -> bool:
        return self.ticks < other.ticks


T0 = TimeValue(0)


@total_ordering
@dataclass(frozen=True)
class Deadline:
    """Absolute expiry time of a message; ``ticks is None`` means it never expires."""

    ticks: Optional[int] = None

    @classmethod
    def finite(cls, time: TimeValue) -> "Deadline":
        return cls(time.ticks)

    @classmethod
    def infinite(cls) -> "Deadline":
        return cls(None)

    @property
    def is_infinite(self) -> bool:
        return self.ticks is None

    def expired_at(self, now: TimeValue) -> bool:
        return self.ticks is not None and now.ticks > self.ticks

    def __lt__(self, other: "Deadline") -> bool:
        if self.ticks is None:
            return False
        if other.ticks is None:
            return True
        return self.ticks < other.ticks

    def __str__(self) -> str:
        return "inf" if self.ticks is None else str(self.ticks)


INFINITE = Deadline.infinite()


# ---------------------------------------------------------------------------
# Syntax tree
#
# Position fields never take part in equality so that a parsed model compares
# equal to the re-parse of its pretty-printed text.

Pos = tuple[int, int]  # (line, column), 1-based


def _pos_field():
    return field(default=None, compare=False, repr=False)


@dataclass
class Expr:
    pass


@dataclass
class IntLit(Expr):
    value: int
    pos: Optional[Pos] = _pos_field()


@dataclass
class BoolLit(Expr):
    value: bool
    pos: Optional[Pos] = _pos_field()


@dataclass
class VarRef(Expr):
    name: str
    pos: Optional[Pos] = _pos_field()


@dataclass
class NowExpr(Expr):
    pos: Optional[Pos] = _pos_field()


@dataclass
class SenderExpr(Expr):
    pos: Optional[Pos] = _pos_field()


@dataclass
class SelfExpr(Expr):
    pos: Optional[Pos] = _pos_field()


@dataclass
class BinaryOp(Expr):
    op: str
    left: Expr
    right: Expr
    pos: Optional[Pos] = _pos_field()


@dataclass
class UnaryOp(Expr):
    op: str
    operand: Expr
    pos: Optional[Pos] = _pos_field()


@dataclass
class ChoiceExpr(Expr):
    """Nondeterministic pick among at least two alternatives: ``?(e1, e2, ...)``."""

    options: list[Expr]
    pos: Optional[Pos] = _pos_field()
    # Stable identifier "<Class>.<method>?<n>" assigned during validation so
    # recorded decision vectors survive re-parsing.
    site_id: Optional[str] = field(default=None, compare=False, repr=False)


@dataclass
class Stmt:
    pass


@dataclass
class Assign(Stmt):
    name: str
    value: Expr
    pos: Optional[Pos] = _pos_field()


@dataclass
class SendStmt(Stmt):
    target: str  # "self", a known rebec, or a rebec-valued local
    method: str
    args: list[Expr]
    after: Optional[Expr] = None
    deadline: Optional[Expr] = None
    pos: Optional[Pos] = _pos_field()
    # Resolved during validation: the class of the target rebec.
    target_class: Optional[str] = field(default=None, compare=False, repr=False)


@dataclass
class NewStmt(Stmt):
    name: str
    class_name: str
    args: list[Expr]
    pos: Optional[Pos] = _pos_field()


@dataclass
class IfStmt(Stmt):
    cond: Expr
    then_body: list[Stmt]
    else_body: Optional[list[Stmt]] = None
    pos: Optional[Pos] = _pos_field()


@dataclass
class DelayStmt(Stmt):
    amount: Expr
    pos: Optional[Pos] = _pos_field()


@dataclass
class NowStmt(Stmt):
    """``now();`` in statement position: reads the clock and discards it."""

    pos: Optional[Pos] = _pos_field()


@dataclass
class Param:
    name: str
    type: str
    pos: Optional[Pos] = _pos_field()


@dataclass
class VarDecl:
    name: str
    type: str  # "int" | "boolean" | "time", or a class name for knownrebecs
    pos: Optional[Pos] = _pos_field()


@dataclass
class MethodDef:
    name: str
    params: list[Param]
    body: list[Stmt]
    pos: Optional[Pos] = _pos_field()


@dataclass
class ReactiveClassDef:
    name: str
    known_decls: list[VarDecl]
    state_decls: list[VarDecl]
    methods: list[MethodDef]
    # Queue length of untimed Rebeca: accepted, warned about, never used.
    queue_bound: Optional[int] = None
    pos: Optional[Pos] = _pos_field()

    def method(self, name: str) -> Optional[MethodDef]:
        for m in self.methods:
            if m.name == name:
                return m
        return None


@dataclass
class InstanceDecl:
    name: str
    class_name: str
    known_args: list[str]
    init_args: list[Expr]  # int/bool literals or env-var references
    pos: Optional[Pos] = _pos_field()


@dataclass
class EnvDecl:
    name: str
    type: str
    pos: Optional[Pos] = _pos_field()


@dataclass
class Model:
    env_decls: list[EnvDecl]
    classes: list[ReactiveClassDef]
    main: list[InstanceDecl]

    def class_def(self, name: str) -> Optional[ReactiveClassDef]:
        for c in self.classes:
            if c.name == name:
                return c
        return None


# ---------------------------------------------------------------------------
# Runtime values


@dataclass(frozen=True)
class IntV:
    value: int


@dataclass(frozen=True)
class BoolV:
    value: bool


@dataclass(frozen=True)
class TimeV:
    time: TimeValue


@dataclass(frozen=True)
class RebecRef:
    rebec_id: str


Value = Union[IntV, BoolV, TimeV, RebecRef]


def value_ticks(v: Value) -> int:
    """Numeric content of an int- or time-valued Value."""
    if isinstance(v, IntV):
        return v.value
    if isinstance(v, TimeV):
        return v.time.ticks
    raise TypeError(f"not a numeric value: {v!r}")


def coerce_value(v: Value, type_name: str) -> Value:
    """Normalize a value to the representation of a declared base type.

    ``time`` is an alias of ``int``, so both store plain IntV: state
    canonicalization stays stable whether a slot was filled from ``now()``
    or from arithmetic.
    """
    if type_name in ("int", "time") and isinstance(v, TimeV):
        return IntV(v.time.ticks)
    return v


def canon_value(v: Value) -> str:
    if isinstance(v, IntV):
        return str(v.value)
    if isinstance(v, BoolV):
        return "true" if v.value else "false"
    if isinstance(v, TimeV):
        return f"t{v.time.ticks}"
    return f"@{v.rebec_id}"


# ---------------------------------------------------------------------------
# Messages, rebec environments, system states


@dataclass(frozen=True)
class Message:
    """One element of the system's message bag.

    ``tt`` and ``dl`` are absolute: the sender's clock plus the relative
    after/deadline offsets, fixed at send time.
    """

    receiver: str
    method: str
    args: tuple[Value, ...]
    sender: str
    tt: TimeValue
    dl: Deadline

    def sort_key(self):
        return (
            self.tt.ticks,
            self.receiver,
            self.method,
            tuple(canon_value(a) for a in self.args),
            self.sender,
            MAX_TICKS + 1 if self.dl.is_infinite else self.dl.ticks,
        )


class RebecEnv:
    """The private store of one rebec.

    ``sender`` and ``locals`` only carry meaning while a method of this rebec
    executes; between executions they are cleared and ``now`` is frozen.
    """

    __slots__ = ("rebec_id", "class_name", "now", "state_vars", "knowns", "sender", "locals")

    def __init__(self, rebec_id: str, class_name: str, now: TimeValue):
        self.rebec_id = rebec_id
        self.class_name = class_name
        self.now = now
        self.state_vars: dict[str, Value] = {}
        self.knowns: dict[str, RebecRef] = {}
        self.sender: Optional[str] = None
        self.locals: dict[str, Value] = {}

    @property
    def self_id(self) -> str:
        return self.rebec_id

    def clone(self) -> "RebecEnv":
        env = RebecEnv(self.rebec_id, self.class_name, self.now)
        env.state_vars = dict(self.state_vars)
        env.knowns = dict(self.knowns)
        return env

    def __repr__(self) -> str:
        return f"RebecEnv({self.rebec_id}:{self.class_name} now={self.now.ticks})"


class SystemState:
    """A pair of rebec environments and the message bag, plus bookkeeping.

    Owned by exactly one executor at a time; ``clone`` produces an
    independent state so distinct simulations and explorer branches never
    share mutable parts.
    """

    __slots__ = ("envs", "bag", "fresh", "env_bindings", "checked")

    def __init__(self, checked, env_bindings: dict[str, Value]):
        self.envs: dict[str, RebecEnv] = {}
        self.bag: list[Message] = []
        self.fresh = 0
        self.env_bindings = env_bindings
        self.checked = checked

    def clone(self) -> "SystemState":
        st = SystemState(self.checked, self.env_bindings)
        st.envs = {rid: env.clone() for rid, env in self.envs.items()}
        st.bag = list(self.bag)
        st.fresh = self.fresh
        return st

    def fresh_rebec_id(self, class_name: str) -> str:
        rid = f"{class_name.lower()}#{self.fresh}"
        self.fresh += 1
        if rid in self.envs:  # defensive: '#' cannot appear in source identifiers
            raise RuntimeError(f"fresh rebec id collision: {rid}")
        return rid

    def sorted_bag(self) -> list[Message]:
        return sorted(self.bag, key=Message.sort_key)


# ---------------------------------------------------------------------------
# Trace events

EV_SENT = "msg_sent"
EV_SELECTED = "msg_selected"
EV_PURGED = "msg_purged"
EV_DELAY = "delay_executed"
EV_CREATED = "rebec_created"
EV_ENDED = "run_ended"


@dataclass(frozen=True)
class TraceEvent:
    """A single observation made during simulation or exploration.

    ``time`` is the logical time at which the event happened: for
    ``msg_selected`` that is max(tt, receiver clock) — the instant the
    method actually starts executing.
    """

    kind: str
    time: int
    rebec: Optional[str] = None
    method: Optional[str] = None
    sender: Optional[str] = None
    tt: Optional[int] = None
    dl: Optional[str] = None  # decimal string or "inf"
    reason: Optional[str] = None  # run_ended only
    args: tuple[str, ...] = ()  # canonical arg values, not serialized
    choices: tuple = ()  # msg_selected only: nondet decisions taken, not serialized


# ---------------------------------------------------------------------------
# Pretty-printer

_PREC = {
    "||": 1,
    "&&": 2,
    "==": 3,
    "!=": 3,
    "<": 4,
    "<=": 4,
    ">": 4,
    ">=": 4,
    "+": 5,
    "-": 5,
    "*": 6,
    "/": 6,
    "%": 6,
}
_UNARY_PREC = 7


def format_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, NowExpr):
        return "now()"
    if isinstance(e, SenderExpr):
        return "sender"
    if isinstance(e, SelfExpr):
        return "self"
    if isinstance(e, ChoiceExpr):
        return "?(" + ", ".join(format_expr(o) for o in e.options) + ")"
    if isinstance(e, UnaryOp):
        inner = format_expr(e.operand, _UNARY_PREC)
        return f"{e.op}{inner}"
    if isinstance(e, BinaryOp):
        prec = _PREC[e.op]
        left = format_expr(e.left, prec)
        right = format_expr(e.right, prec + 1)  # left-associative
        text = f"{left} {e.op} {right}"
        return f"({text})" if prec < parent_prec else text
    raise TypeError(f"unknown expression node: {e!r}")


def _format_stmt(s: Stmt, indent: int, out: list[str]) -> None:
    pad = "    " * indent
    if isinstance(s, Assign):
        out.append(f"{pad}{s.name} = {format_expr(s.value)};")
    elif isinstance(s, SendStmt):
        call = f"{s.target}.{s.method}(" + ", ".join(format_expr(a) for a in s.args) + ")"
        if s.after is not None:
            call += f" after({format_expr(s.after)})"
        if s.deadline is not None:
            call += f" deadline({format_expr(s.deadline)})"
        out.append(f"{pad}{call};")
    elif isinstance(s, NewStmt):
        args = ", ".join(format_expr(a) for a in s.args)
        out.append(f"{pad}{s.name} = new {s.class_name}({args});")
    elif isinstance(s, DelayStmt):
        out.append(f"{pad}delay({format_expr(s.amount)});")
    elif isinstance(s, NowStmt):
        out.append(f"{pad}now();")
    elif isinstance(s, IfStmt):
        out.append(f"{pad}if ({format_expr(s.cond)}) {{")
        for sub in s.then_body:
            _format_stmt(sub, indent + 1, out)
        if s.else_body is not None:
            out.append(f"{pad}}} else {{")
            for sub in s.else_body:
                _format_stmt(sub, indent + 1, out)
        out.append(f"{pad}}}")
    else:
        raise TypeError(f"unknown statement node: {s!r}")


def pretty_print(model: Model) -> str:
    """Render a model as canonical source text; parsing it back yields an
    equal tree."""
    out: list[str] = []
    for env in model.env_decls:
        out.append(f"env {env.type} {env.name};")
    if model.env_decls:
        out.append("")
    for cls in model.classes:
        bound = f"({cls.queue_bound})" if cls.queue_bound is not None else ""
        out.append(f"reactiveclass {cls.name}{bound} {{")
        out.append("    knownrebecs {")
        for d in cls.known_decls:
            out.append(f"        {d.type} {d.name};")
        out.append("    }")
        out.append("    statevars {")
        for d in cls.state_decls:
            out.append(f"        {d.type} {d.name};")
        out.append("    }")
        for m in cls.methods:
            params = ", ".join(f"{p.type} {p.name}" for p in m.params)
            out.append(f"    msgsrv {m.name}({params}) {{")
            for s in m.body:
                _format_stmt(s, 2, out)
            out.append("    }")
        out.append("}")
        out.append("")
    out.append("main {")
    for inst in model.main:
        knowns = ", ".join(inst.known_args)
        inits = ", ".join(format_expr(a) for a in inst.init_args)
        out.append(f"    {inst.class_name} {inst.name}({knowns}):({inits});")
    out.append("}")
    return "\n".join(out) + "\n"
