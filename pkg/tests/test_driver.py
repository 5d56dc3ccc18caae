import json
from dataclasses import replace

import pytest

from aam import analysis, cli
from aam.concrete import MT
from aam.core import A_MT, KCFA
from aam.engine import analyze_widened
from aam.syntax import Program, parse

import support

P0 = KCFA.abstract(0)
ID_APP = "((lambda (x) x) (lambda (y) y))"
OMEGA = "((lambda (x) (x x)) (lambda (x) (x x)))"
CESK = analysis.family("cesk-star")


def test_widened_value_program():
    sys_ = CESK.widened(parse("(lambda (x) x)"), P0)
    assert len(sys_.states) == 1
    assert dict(sys_.store) == {A_MT: {MT}}
    assert sys_.iterations == 2


def test_widened_omega_is_a_fixpoint():
    sys_ = CESK.widened(parse(OMEGA), P0)
    for c in sys_.full_states():
        for n in CESK.step(c, P0):
            assert n.store.leq(sys_.store)
            assert replace(n, store=None) in sys_.states


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_widening_ignores_worklist_order(seed):
    e = parse(support.source("pure", "church-two"))
    base = CESK.widened(e, P0)
    shuffled = analyze_widened(CESK.inject(e, P0), lambda s: CESK.step(s, P0), shuffle_seed=seed)
    assert shuffled.states == base.states and shuffled.store == base.store


def test_bound_formula_on_identity():
    # 2 labels, 1 variable, 1 lambda: 2*4 + 1 + 3*(2*2*2 + 1)
    assert analysis.monovariant_bound(parse("(lambda (x) x)")) == 36


def test_bound_check_on_identity_application():
    rep = analysis.monovariant_bound_check(parse(ID_APP))
    assert rep.ok and rep.iterations >= 2
    assert rep.bound == 5 * 25 + 1 + 7 * (2 * 25 + 2)


def test_flow_facts_identity_application():
    e = parse(ID_APP)
    g = CESK.aval(e, P0)
    assert analysis.flow_facts(g.states, Program.of(e)) == {(e.label, e.fn.label)}


def test_flow_facts_omega_self_application():
    e = parse(OMEGA)
    facts = analysis.flow_facts(CESK.aval(e, P0).states, Program.of(e))
    # both copies of (x x) end up applying the operand lambda
    assert facts == {(e.label, e.fn.label), (e.fn.body.label, e.arg.label), (e.arg.body.label, e.arg.label)}


def test_terminal_summary():
    assert analysis.terminal_summary(CESK.aval(parse(ID_APP), P0)) == {"final": 1}
    assert analysis.terminal_summary(analysis.family("ceshk").aval(parse("(throw (lambda (v) v))"), P0)) == {"uncaught": 1}


# -- emission ------------------------------------------------------------------------


def test_emit_single_state_dot():
    g = CESK.aval(parse("(lambda (x) x)"), P0)
    dot = cli.emit_graph(g, "dot")
    assert dot.startswith("digraph") and dot.count("->") == 0 and "s0 [" in dot


def test_run_graph_is_a_path():
    e = parse(ID_APP)
    states, status = cli.concrete_trace(e, dict(cli.DEFAULTS, machine="cesk-star", fuel=100))
    g = cli.trace_graph(states)
    assert status == "final" and len(g.states) == 5
    assert g.edges == [(0, 1), (1, 2), (2, 3), (3, 4)]


def test_emit_json_round_trip():
    e = parse(ID_APP)
    g = CESK.aval(e, P0)
    doc = json.loads(cli.emit_graph(g, "json", Program.of(e)))
    assert len(doc["states"]) == len(g.states)
    assert [tuple(x) for x in doc["edges"]] == list(g.edges)
    assert doc["flows"] == {str(e.label): [e.fn.label]}
    assert doc["terminals"] == {"final": 1}


def test_emit_unknown_format():
    with pytest.raises(cli.UsageError):
        cli.emit_graph(CESK.aval(parse("(lambda (x) x)"), P0), "svg")


# -- command line --------------------------------------------------------------------


@pytest.fixture
def prog(tmp_path):
    def write(text, name="p.scm"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return write


def test_cli_run_cek(prog, capsys):
    assert cli.main(["run", "--machine", "cek", prog(ID_APP)]) == 0
    out = capsys.readouterr()
    assert out.out.count("\n") == 5 and "status: final" in out.err


def test_cli_analyze_gc_writes_dot(prog, tmp_path):
    out = tmp_path / "g.dot"
    assert cli.main(["analyze", "--k", "1", "--gc", "--out", str(out), prog(ID_APP)]) == 0
    assert out.read_text().startswith("digraph")


def test_cli_analyze_summary(prog, capsys):
    assert cli.main(["analyze", "--widen", "global-store", prog(OMEGA)]) == 0
    text = capsys.readouterr().out
    assert "states:" in text and "iterations:" in text


def test_cli_analyze_json_by_extension(prog, tmp_path):
    out = tmp_path / "g.json"
    assert cli.main(["analyze", "--out", str(out), prog(ID_APP)]) == 0
    assert json.loads(out.read_text())["terminals"] == {"final": 1}


@pytest.mark.parametrize("machine", ["cek", "lk", "cm"])
def test_cli_check_lockstep(prog, capsys, machine):
    assert cli.main(["check", "--lockstep", "--machine", machine, prog(ID_APP)]) == 0
    assert "agree" in capsys.readouterr().out


def test_cli_check_soundness(prog, capsys):
    assert cli.main(["check", "--soundness", "--machine", "ceshk", "--k", "1", prog(support.source("exc", "catch-throw"))]) == 0


def test_cli_uncaught_exits_1(prog):
    path = prog("(throw (lambda (v) v))")
    assert cli.main(["run", "--machine", "ceshk", path]) == 1
    assert cli.main(["analyze", "--machine", "ceshk", path]) == 1


def test_cli_stuck_exits_1(prog):
    assert cli.main(["run", "--machine", "extended", prog("(callcc callcc)")]) == 1


def test_cli_fail_exits_1(prog):
    assert cli.main(["run", "--machine", "cm", prog(support.source("sec", "fail"))]) == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--machine", "nope"],
        ["run", "--k", "x"],
        ["analyze", "--widen", "global-store", "--gc"],
        ["run", "--variant", "lazy"],
        ["frobnicate"],
    ],
)
def test_cli_usage_errors_exit_2(prog, argv):
    assert cli.main(argv + [prog(ID_APP)]) == 2


def test_cli_parse_error_exits_2(prog, capsys):
    assert cli.main(["run", prog("((lambda (x) x)")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_open_term_exits_2(prog):
    assert cli.main(["run", prog("(x x)")]) == 2


def test_cli_missing_file_exits_2(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.scm")]) == 2


def test_config_file_and_flag_precedence(prog, tmp_path, capsys):
    cfg = tmp_path / "aam.conf"
    cfg.write_text("# defaults\nmachine = cek\nfuel = 3\n")
    path = prog(OMEGA)
    assert cli.main(["run", "--config", str(cfg), path]) == 0
    assert "after 3 steps" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(cfg), "--fuel", "7", path]) == 0
    assert "after 7 steps" in capsys.readouterr().err


def test_config_rejects_unknown_keys(prog, tmp_path):
    cfg = tmp_path / "bad.conf"
    cfg.write_text("colour = blue\n")
    assert cli.main(["run", "--config", str(cfg), prog(ID_APP)]) == 2


def test_fuel_environment_variable(prog, monkeypatch, capsys):
    monkeypatch.setenv("AAM_FUEL", "4")
    assert cli.main(["run", prog(OMEGA)]) == 0
    assert "fuel-exhausted after 4 steps" in capsys.readouterr().err


def test_permissions_flag_annotates_program(prog, capsys):
    # the annotated body frame keeps only q, so p is denied inside the call
    path = prog("((lambda (u) (test (p) (lambda (a) a) (lambda (b) b))) (lambda (i) i))")
    assert cli.main(["run", "--machine", "cm", path]) == 0
    assert "λa" in capsys.readouterr().out.strip().splitlines()[-1]
    assert cli.main(["run", "--machine", "cm", "--permissions", "q", path]) == 0
    assert "λb" in capsys.readouterr().out.strip().splitlines()[-1]
