"""One unit test per method-execution rule and per scheduler side condition,
each asserting the exact post-state the rule prescribes."""
import pytest

from trebeca.interp import ExecEffects, ExecError, FixedResolver, eval_expr, exec_method, exec_stmt
from trebeca.model import (
    Assign,
    BinaryOp,
    ChoiceExpr,
    Deadline,
    DelayStmt,
    IfStmt,
    IntLit,
    IntV,
    Message,
    NewStmt,
    NowExpr,
    RebecRef,
    SendStmt,
    TimeV,
    TimeValue,
)
from trebeca.parser import load_model
from trebeca.scheduler import (
    CHECK_EFFECTIVE,
    CHECK_LITERAL,
    SchedulePolicy,
    build_initial_state,
    eligible,
    min_tt_candidates,
    normalize_env_bindings,
    scheduler_step,
)

HARNESS_SRC = """
reactiveclass Alpha {
    knownrebecs {
        Beta peer;
    }
    statevars {
        int x;
        time t;
    }
    msgsrv initial() {
    }
    msgsrv probe(int v) {
        x = v;
    }
}

reactiveclass Beta {
    knownrebecs {
    }
    statevars {
        int y;
    }
    msgsrv initial() {
    }
    msgsrv ping(int v) {
    }
}

reactiveclass Spawned {
    knownrebecs {
    }
    statevars {
    }
    msgsrv initial(int v) {
    }
}

main {
    Alpha alpha(beta):();
    Beta beta():();
}
"""


class Const:
    """Resolver pinned to one index."""

    def __init__(self, k: int):
        self.k = k

    def choose(self, site, arity):
        assert self.k < arity
        return self.k


def fresh_state():
    checked = load_model(HARNESS_SRC)
    state, _ = build_initial_state(checked, normalize_env_bindings(checked, {}))
    state.bag.clear()  # rule tests drive the bag by hand
    return state


def no_choice():
    return FixedResolver([])


# ---------------------------------------------------------------------------
# eval


def test_eval_arithmetic():
    state = fresh_state()
    env = state.envs["alpha"]
    value = eval_expr(BinaryOp("+", IntLit(2), IntLit(3)), env, state, no_choice())
    assert value == IntV(5)


def test_eval_now_reads_local_clock():
    state = fresh_state()
    env = state.envs["alpha"]
    env.now = TimeValue(7)
    assert eval_expr(NowExpr(), env, state, no_choice()) == TimeV(TimeValue(7))


def test_eval_choice_consults_resolver():
    state = fresh_state()
    env = state.envs["alpha"]
    expr = ChoiceExpr([IntLit(3), IntLit(4)])
    expr.site_id = "test?0"
    assert eval_expr(expr, env, state, Const(1)) == IntV(4)
    assert eval_expr(expr, env, state, Const(0)) == IntV(3)


# ---------------------------------------------------------------------------
# Method-execution rules


def test_rule_assign():
    state = fresh_state()
    env = state.envs["alpha"]
    stmt = Assign("x", BinaryOp("+", IntLit(2), IntLit(3)))
    exec_stmt(stmt, env, state, no_choice(), ExecEffects(env=env))
    assert env.state_vars["x"] == IntV(5)
    assert state.bag == [] and env.now == TimeValue(0)


def test_rule_delay():
    state = fresh_state()
    env = state.envs["alpha"]
    env.now = TimeValue(5)
    exec_stmt(DelayStmt(IntLit(3)), env, state, no_choice(), ExecEffects(env=env))
    assert env.now == TimeValue(8)
    assert state.bag == []


def test_rule_delay_rejects_negative():
    state = fresh_state()
    env = state.envs["alpha"]
    with pytest.raises(ExecError):
        exec_stmt(DelayStmt(BinaryOp("-", IntLit(0), IntLit(1))), env, state,
                  no_choice(), ExecEffects(env=env))


def test_rule_msg_with_after_and_deadline():
    state = fresh_state()
    env = state.envs["alpha"]
    env.now = TimeValue(10)
    stmt = SendStmt(target="peer", method="ping", args=[IntLit(1)],
                    after=IntLit(4), deadline=IntLit(7))
    stmt.target_class = "Beta"
    exec_stmt(stmt, env, state, no_choice(), ExecEffects(env=env))
    assert state.bag == [Message(receiver="beta", method="ping", args=(IntV(1),),
                                 sender="alpha", tt=TimeValue(14),
                                 dl=Deadline.finite(TimeValue(17)))]
    assert env.now == TimeValue(10)  # sending does not advance the clock


def test_rule_msg_defaults_zero_after_infinite_deadline():
    state = fresh_state()
    env = state.envs["alpha"]
    env.now = TimeValue(10)
    stmt = SendStmt(target="peer", method="ping", args=[IntLit(0)])
    exec_stmt(stmt, env, state, no_choice(), ExecEffects(env=env))
    (msg,) = state.bag
    assert msg.tt == TimeValue(10)
    assert msg.dl.is_infinite


def test_rule_msg_rejects_nonpositive_deadline():
    state = fresh_state()
    env = state.envs["alpha"]
    stmt = SendStmt(target="peer", method="ping", args=[IntLit(0)], deadline=IntLit(0))
    with pytest.raises(ExecError):
        exec_stmt(stmt, env, state, no_choice(), ExecEffects(env=env))


def test_rule_create():
    state = fresh_state()
    env = state.envs["alpha"]
    env.now = TimeValue(6)
    effects = ExecEffects(env=env)
    exec_stmt(NewStmt("fresh", "Spawned", [IntLit(4)]), env, state, no_choice(), effects)
    new_id = "spawned#0"
    assert env.locals["fresh"] == RebecRef(new_id)
    created = state.envs[new_id]
    assert created.now == TimeValue(6) and created.self_id == new_id
    assert state.bag == [Message(receiver=new_id, method="initial", args=(IntV(4),),
                                 sender="alpha", tt=TimeValue(6), dl=Deadline.infinite())]
    assert effects.new_envs == [created]


def test_rule_cond1_true_branch():
    state = fresh_state()
    env = state.envs["alpha"]
    stmt = IfStmt(BinaryOp("==", IntLit(1), IntLit(1)),
                  [Assign("x", IntLit(1))], [Assign("x", IntLit(2))])
    exec_stmt(stmt, env, state, no_choice(), ExecEffects(env=env))
    assert env.state_vars["x"] == IntV(1)


def test_rule_cond2_false_branch():
    state = fresh_state()
    env = state.envs["alpha"]
    stmt = IfStmt(BinaryOp("==", IntLit(1), IntLit(2)),
                  [Assign("x", IntLit(1))], [Assign("x", IntLit(2))])
    exec_stmt(stmt, env, state, no_choice(), ExecEffects(env=env))
    assert env.state_vars["x"] == IntV(2)


def test_rule_seq_threads_effects_left_to_right():
    state = fresh_state()
    env = state.envs["alpha"]
    env.now = TimeValue(5)
    effects = ExecEffects(env=env)
    # delay(2); x = now();  entered at now=5 leaves x = 7
    exec_stmt(DelayStmt(IntLit(2)), env, state, no_choice(), effects)
    exec_stmt(Assign("t", NowExpr()), env, state, no_choice(), effects)
    assert env.state_vars["t"] == IntV(7)
    assert env.now == TimeValue(7)


# ---------------------------------------------------------------------------
# Scheduler side conditions


def _msg(receiver, method, tt, dl=None, args=(), sender="alpha"):
    deadline = Deadline.infinite() if dl is None else Deadline.finite(TimeValue(dl))
    return Message(receiver=receiver, method=method, args=tuple(args),
                   sender=sender, tt=TimeValue(tt), dl=deadline)


def test_scheduler_now_becomes_max_of_tt_and_clock():
    state = fresh_state()
    env = state.envs["alpha"]
    env.now = TimeValue(2)
    exec_method(_msg("alpha", "initial", tt=5), state, no_choice())
    assert env.now == TimeValue(5)


def test_scheduler_now_keeps_larger_clock():
    state = fresh_state()
    env = state.envs["alpha"]
    env.now = TimeValue(9)
    exec_method(_msg("alpha", "initial", tt=5), state, no_choice())
    assert env.now == TimeValue(9)


def test_exec_method_touches_only_the_receiver():
    # fresh_state reparses the harness, so patching this body is isolated
    state = fresh_state()
    stmt = SendStmt(target="peer", method="ping", args=[IntLit(1)], after=IntLit(2))
    state.checked.classes["Alpha"].methods["initial"].definition.body.append(stmt)
    before = {rid: (env.now, dict(env.state_vars)) for rid, env in state.envs.items()
              if rid != "alpha"}
    exec_method(_msg("alpha", "initial", tt=4), state, no_choice())
    after = {rid: (env.now, dict(env.state_vars)) for rid, env in state.envs.items()
             if rid != "alpha"}
    assert before == after  # only messages cross rebec boundaries
    assert len(state.bag) == 1


def test_scheduler_binds_sender_and_params_then_discards():
    state = fresh_state()
    env = state.envs["alpha"]
    exec_method(_msg("alpha", "probe", tt=0, args=(IntV(42),), sender="beta"), state,
                no_choice())
    assert env.state_vars["x"] == IntV(42)
    assert env.sender is None and env.locals == {}


def test_scheduler_purges_expired_deadline():
    state = fresh_state()
    env = state.envs["alpha"]
    env.now = TimeValue(9)
    state.bag.append(_msg("alpha", "probe", tt=0, dl=8, args=(IntV(1),)))
    assert not eligible(state.bag[0], state, CHECK_LITERAL)
    outcome = scheduler_step(state, SchedulePolicy(horizon=100), no_choice())
    assert outcome.reason == "all-expired"
    assert [ev.kind for ev in outcome.events] == ["msg_purged"]
    assert state.bag == []


def test_scheduler_infinite_deadline_always_eligible():
    state = fresh_state()
    state.bag.append(_msg("alpha", "probe", tt=0, args=(IntV(1),)))
    assert eligible(state.bag[0], state, CHECK_LITERAL)


def test_eligible_literal_vs_effective_divergence():
    # receiver clock 0, tt 10, dl 5: serving it would start past the deadline
    state = fresh_state()
    msg = _msg("alpha", "probe", tt=10, dl=5, args=(IntV(1),))
    state.bag.append(msg)
    assert eligible(msg, state, CHECK_LITERAL) is True
    assert eligible(msg, state, CHECK_EFFECTIVE) is False


def test_scheduler_selects_minimal_time_tag():
    state = fresh_state()
    m1 = _msg("alpha", "probe", tt=3, args=(IntV(1),))
    m2 = _msg("beta", "ping", tt=5, args=(IntV(2),))
    state.bag.extend([m2, m1])
    assert min_tt_candidates(state) == [m1]
    outcome = scheduler_step(state, SchedulePolicy(horizon=100), no_choice())
    assert outcome.selected == m1
    assert state.bag == [m2]


def test_scheduler_purges_before_selecting():
    state = fresh_state()
    env = state.envs["alpha"]
    env.now = TimeValue(2)
    expired = _msg("alpha", "probe", tt=3, dl=1, args=(IntV(1),))
    valid = _msg("beta", "ping", tt=5, args=(IntV(2),))
    state.bag.extend([expired, valid])
    outcome = scheduler_step(state, SchedulePolicy(horizon=100), no_choice())
    assert [ev.kind for ev in outcome.events[:2]] == ["msg_purged", "msg_selected"]
    assert outcome.selected == valid


def test_scheduler_empty_bag_terminates():
    state = fresh_state()
    outcome = scheduler_step(state, SchedulePolicy(horizon=100), no_choice())
    assert outcome.reason == "empty-bag"


def test_scheduler_horizon_stops_before_executing():
    state = fresh_state()
    state.bag.append(_msg("alpha", "probe", tt=31, args=(IntV(1),)))
    outcome = scheduler_step(state, SchedulePolicy(horizon=30), no_choice())
    assert outcome.reason == "horizon"
    assert state.bag != []  # nothing executed


ALL_RULE_TESTS = [
    test_eval_arithmetic,
    test_eval_now_reads_local_clock,
    test_eval_choice_consults_resolver,
    test_rule_assign,
    test_rule_delay,
    test_rule_delay_rejects_negative,
    test_rule_msg_with_after_and_deadline,
    test_rule_msg_defaults_zero_after_infinite_deadline,
    test_rule_msg_rejects_nonpositive_deadline,
    test_rule_create,
    test_rule_cond1_true_branch,
    test_rule_cond2_false_branch,
    test_rule_seq_threads_effects_left_to_right,
    test_scheduler_now_becomes_max_of_tt_and_clock,
    test_scheduler_now_keeps_larger_clock,
    test_scheduler_binds_sender_and_params_then_discards,
    test_scheduler_purges_expired_deadline,
    test_scheduler_infinite_deadline_always_eligible,
    test_eligible_literal_vs_effective_divergence,
    test_scheduler_selects_minimal_time_tag,
    test_scheduler_purges_before_selecting,
    test_scheduler_empty_bag_terminates,
    test_scheduler_horizon_stops_before_executing,
]
