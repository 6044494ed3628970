import re
from pathlib import Path

import pytest

from conftest import bundled_text
from trebeca.erlgen import UnsupportedFeatureError, emit
from trebeca.parser import load_model

GOLDEN = Path(__file__).parent / "golden"


def emit_files(source: str) -> dict[str, str]:
    return emit(load_model(source)).files


@pytest.mark.parametrize("name,source", [
    ("ticket_service", lambda: bundled_text("ticket_service.rebeca")),
    ("delay_demo", lambda: (GOLDEN / "delay_demo.rebeca").read_text()),
])
def test_golden_files_byte_identical(name, source):
    files = emit_files(source())
    golden_dir = GOLDEN / name
    assert sorted(files) == sorted(p.name for p in golden_dir.iterdir())
    for fname, text in files.items():
        assert text == (golden_dir / fname).read_text(), f"{name}/{fname} drifted"


def test_emission_is_deterministic():
    source = bundled_text("ticket_service.rebeca")
    assert emit_files(source) == emit_files(source)


def test_delay_form():
    worker = emit_files((GOLDEN / "delay_demo.rebeca").read_text())["worker.erl"]
    assert "receive after 10 -> ok end" in worker


def test_after_send_spawn_shape():
    worker = emit_files((GOLDEN / "delay_demo.rebeca").read_text())["worker.erl"]
    match = re.search(
        r"Sender = self\(\),\n"
        r"\s*spawn\(fun\(\) ->\n"
        r"\s*receive after 15 ->\n"
        r"\s*.*! \{\{Sender, now\(\), now\(\) \+ 4\}, finished\}\n"
        r"\s*end\n"
        r"\s*end\),",
        worker,
    )
    assert match, "after-send must sleep in a spawned helper before sending"


def test_three_stage_skeleton():
    files = emit_files(bundled_text("ticket_service.rebeca"))
    ts = files["ticketservice.erl"]
    assert "ticketService() ->" in ts
    assert "ticketService(KnownRebecs) ->" in ts
    assert "ticketService(KnownRebecs, StateVars) ->" in ts


def test_new_is_unsupported():
    src = """
    reactiveclass A {
        knownrebecs {}
        statevars {}
        msgsrv initial() { r = new B(); }
    }
    reactiveclass B { knownrebecs {} statevars {} msgsrv initial() {} }
    main { A a():(); B b():(); }
    """
    with pytest.raises(UnsupportedFeatureError, match="new"):
        emit(load_model(src))


def test_structural_completeness():
    checked = load_model(bundled_text("ticket_service.rebeca"))
    files = emit(checked).files
    for cls_name, info in checked.classes.items():
        text = files[f"{cls_name.lower()}.erl"]
        for method in info.methods:
            # each message server appears exactly once as a receive match
            pattern = r"\{\{From, SendTime, Deadline\}, " + method + r"[,}]"
            assert len(re.findall(pattern, text)) == 1, (cls_name, method)
        for decl in info.definition.state_decls:
            assert re.search(rf"_statevars, {{.*{decl.name} =", text)


def test_balanced_delimiters_everywhere():
    for source in (bundled_text("ticket_service.rebeca"),
                   (GOLDEN / "delay_demo.rebeca").read_text()):
        for fname, text in emit_files(source).items():
            for op, cl in (("(", ")"), ("{", "}"), ("[", "]")):
                assert text.count(op) == text.count(cl), (fname, op)


def test_nondeterministic_choice_emits_random_selection():
    files = emit_files(bundled_text("ticket_service.rebeca"))
    assert "lists:nth(rand:uniform(2), [env:serviceTime1(), env:serviceTime2()])" \
        in files["ticketservice.erl"]


def test_env_module_lists_every_parameter():
    files = emit_files(bundled_text("ticket_service.rebeca"))
    env = files["env.erl"]
    for name in ("requestDeadline", "checkIssuedPeriod", "retryRequestPeriod",
                 "newRequestPeriod", "serviceTime1", "serviceTime2"):
        assert f"{name}() ->" in env


def test_write_to_disk(tmp_path):
    program = emit(load_model(bundled_text("ticket_service.rebeca")))
    written = program.write_to(tmp_path / "out")
    assert sorted(p.name for p in written) == sorted(program.files)
    assert (tmp_path / "out" / "main.erl").read_text() == program.files["main.erl"]
