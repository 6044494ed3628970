import random

import pytest

from conftest import bundled_text
from trebeca.model import IntLit, pretty_print
from trebeca.parser import SourceError, load_model, parse_model

MINIMAL = "reactiveclass A { knownrebecs {} statevars {} msgsrv initial() {} } main { A a():(); }"


def errors_of(source: str):
    try:
        load_model(source)
    except SourceError as exc:
        return exc.errors
    return []


def test_minimal_model():
    model = parse_model(MINIMAL)
    assert len(model.classes) == 1
    assert len(model.main) == 1
    assert model.main[0].class_name == "A"


def test_ticket_service_shape():
    model = parse_model(bundled_text("ticket_service.rebeca"))
    assert [c.name for c in model.classes] == ["Agent", "TicketService"]
    assert [i.name for i in model.main] == ["a", "ts1", "ts2"]
    assert len(model.env_decls) == 6


def test_after_and_deadline_clauses_recorded():
    src = """
    reactiveclass A {
        knownrebecs {}
        statevars {}
        msgsrv initial() { self.m() after(2) deadline(1); }
        msgsrv m() {}
    }
    main { A a():(); }
    """
    model = parse_model(src)
    send = model.classes[0].methods[0].body[0]
    assert send.after == IntLit(2)
    assert send.deadline == IntLit(1)


def test_delay_outside_method_is_an_error():
    errs = errors_of("delay(5); " + MINIMAL)
    assert errs and errs[0].pos == (1, 1)


def test_duplicate_block_keyword():
    src = "reactiveclass A { knownrebecs {} knownrebecs {} statevars {} } main { A a():(); }"
    with pytest.raises(SourceError) as exc:
        parse_model(src)
    assert any("duplicate knownrebecs" in e.message for e in exc.value.errors)


def test_choice_needs_two_alternatives():
    src = MINIMAL.replace("msgsrv initial() {}", "msgsrv initial() { x = ?(1); }")
    with pytest.raises(SourceError):
        parse_model(src)


def test_comments_and_unterminated_block_comment():
    parse_model("// line\n/* block\n comment */" + MINIMAL)
    with pytest.raises(SourceError):
        parse_model("/* never closed " + MINIMAL)


def test_known_arity_mismatch():
    src = """
    reactiveclass A {
        knownrebecs { B peer; }
        statevars {}
        msgsrv initial() {}
    }
    reactiveclass B { knownrebecs {} statevars {} msgsrv initial() {} }
    main { A a(b, b):(); B b():(); }
    """
    errs = errors_of(src)
    assert any("passes 2 known" in e.message for e in errs)


def test_call_arity_and_types_checked():
    good = """
    reactiveclass TicketService {
        knownrebecs {}
        statevars {}
        msgsrv initial() {}
        msgsrv requestTicket(int token) {}
    }
    main { TicketService ts1():(); }
    """
    model = load_model(good.replace("msgsrv initial() {}",
                                    "msgsrv initial() { self.requestTicket(5); }"))
    assert "TicketService" in model.classes
    bad = good.replace("msgsrv initial() {}",
                       "msgsrv initial() { self.requestTicket(true); }")
    assert any("argument" in e.message for e in errors_of(bad))
    bad2 = good.replace("msgsrv initial() {}",
                        "msgsrv initial() { self.requestTicket(); }")
    assert any("expects 1 argument" in e.message for e in errors_of(bad2))


def test_missing_initial_detected():
    src = "reactiveclass A { knownrebecs {} statevars {} msgsrv go() {} } main { A a():(); }"
    assert any("no initial" in e.message for e in errors_of(src))


def test_unknown_class_in_main():
    src = MINIMAL.replace("A a():();", "A a():(); Z z():();")
    assert any("unknown class 'Z'" in e.message for e in errors_of(src))


def test_queue_bound_parsed_and_warned():
    src = MINIMAL.replace("reactiveclass A {", "reactiveclass A(5) {")
    checked = load_model(src)
    assert checked.model.classes[0].queue_bound == 5
    assert any("queue bound" in w.message for w in checked.warnings)


def test_env_vars_resolve_and_unknown_names_rejected():
    src = "env int speed;\n" + MINIMAL.replace(
        "msgsrv initial() {}", "msgsrv initial() { x = speed + 1; }")
    load_model(src)
    bad = MINIMAL.replace("msgsrv initial() {}", "msgsrv initial() { x = speed + 1; }")
    assert any("unknown name 'speed'" in e.message for e in errors_of(bad))


def test_reserved_names_cannot_be_shadowed():
    # self/now/sender are keywords, so using one as a variable name is
    # already a parse error.
    src = MINIMAL.replace("statevars {}", "statevars { int sender; }")
    errs = errors_of(src)
    assert errs and "'sender'" in errs[0].message


def test_send_target_must_be_rebec_valued():
    src = MINIMAL.replace("msgsrv initial() {}",
                          "msgsrv initial() { x = 1; x.m(); }")
    assert any("send target" in e.message for e in errors_of(src))


def test_read_before_assignment_of_local():
    src = MINIMAL.replace("msgsrv initial() {}", "msgsrv initial() { x = y + 1; }")
    assert any("unknown name 'y'" in e.message for e in errors_of(src))


def test_branch_local_needs_both_branches():
    body = "if (true) { v = 1; } else { v = 2; } x = v;"
    src = MINIMAL.replace("msgsrv initial() {}", "msgsrv initial() { %s }" % body)
    load_model(src)
    body_one = "if (true) { v = 1; } x = v;"
    src_one = MINIMAL.replace("msgsrv initial() {}", "msgsrv initial() { %s }" % body_one)
    assert any("unknown name 'v'" in e.message for e in errors_of(src_one))


def test_new_target_must_not_declare_knownrebecs():
    src = """
    reactiveclass A {
        knownrebecs { B peer; }
        statevars {}
        msgsrv initial() { r = new A(); }
    }
    reactiveclass B { knownrebecs {} statevars {} msgsrv initial() {} }
    main { A a(b):(); B b():(); }
    """
    assert any("declares knownrebecs" in e.message for e in errors_of(src))


def test_main_initial_must_be_parameterless():
    src = """
    reactiveclass A {
        knownrebecs {}
        statevars {}
        msgsrv initial(int v) {}
    }
    main { A a():(); }
    """
    assert any("parameterless initial" in e.message for e in errors_of(src))


def test_error_positions_point_into_source():
    src = "reactiveclass A {\n  knownrebecs {}\n  statevars {}\n  msgsrv initial() { x = ; }\n}\nmain { A a():(); }"
    with pytest.raises(SourceError) as exc:
        parse_model(src)
    line, col = exc.value.errors[0].pos
    assert line == 4 and col >= 1


def test_choice_sites_are_stable_ids(ticket_model):
    info = ticket_model.classes["TicketService"]
    assert info.methods["requestTicket"].choice_sites == ["TicketService.requestTicket?0"]


def test_fuzzed_mutations_never_crash_and_report_positions():
    source = bundled_text("ticket_service.rebeca")
    lines = source.count("\n") + 1
    rng = random.Random(7)
    for _ in range(300):
        pos = rng.randrange(len(source))
        op = rng.randrange(3)
        if op == 0:
            mutated = source[:pos] + source[pos + 1:]
        elif op == 1:
            mutated = source[:pos] + rng.choice("{}();=?.,xz19 ") + source[pos:]
        else:
            mutated = source[:pos] + rng.choice("{}();=?.,xz19 ") + source[pos + 1:]
        try:
            load_model(mutated)
        except SourceError as exc:
            assert exc.errors
            line, col = exc.errors[0].pos
            assert 1 <= line <= mutated.count("\n") + 2
            assert col >= 1
        # a mutation may also still be a valid model; that is fine


def test_pretty_print_echoes_choice_spacing():
    src = MINIMAL.replace("msgsrv initial() {}", "msgsrv initial() { x = ?(3,4); }")
    model = parse_model(src)
    assert "?(3, 4)" in pretty_print(model)


def test_pretty_print_minimal_layout_order():
    text = pretty_print(parse_model(MINIMAL))
    assert text.index("reactiveclass") < text.index("main")


def test_pretty_print_empty_class():
    model = parse_model("reactiveclass A { knownrebecs {} statevars {} } main {}")
    text = pretty_print(model)
    assert text.index("reactiveclass") < text.index("main")
    assert parse_model(text) == model


def test_comma_separated_declarations():
    src = """
    env int a, b;
    reactiveclass A {
        knownrebecs {}
        statevars { int x, y; boolean f; }
        msgsrv initial() { x = a + b; }
    }
    main { A r():(); }
    """
    model = parse_model(src)
    assert [d.name for d in model.env_decls] == ["a", "b"]
    assert [d.name for d in model.classes[0].state_decls] == ["x", "y", "f"]
    assert parse_model(pretty_print(model)) == model


def test_braceless_if_branches():
    src = MINIMAL.replace(
        "msgsrv initial() {}",
        "msgsrv initial() { if (true) x = 1; else x = 2; }")
    model = load_model(src)
    stmt = model.model.classes[0].methods[0].body[0]
    assert len(stmt.then_body) == 1 and len(stmt.else_body) == 1
