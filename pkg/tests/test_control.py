import pytest

from aam import analysis, control
from aam.abstract import alpha, ordering_leq
from aam.concrete import MT, Clo, State
from aam.control import Hn, HState, IfK, SetK, ceshk_inject, ceshk_step, ext_inject, ext_step
from aam.core import A_MT, EMPTY_ENV, KCFA, T0, Addr, Store
from aam.syntax import FalseLit, Program, parse, unparse

import support

P0, P1 = KCFA.abstract(0), KCFA.abstract(1)
LAM_A, LAM_B = parse("(lambda (a) a)"), parse("(lambda (b) b)")


def _if_state(value, p=P0):
    b = Addr(("k", 7))
    store = Store.of((A_MT, MT), (b, IfK(LAM_A, LAM_B, EMPTY_ENV, A_MT)))
    return State(value, EMPTY_ENV, store, b, T0)


def test_if_false_takes_else_only():
    succ = ext_step(_if_state(FalseLit(20)), P0)
    assert [n.control for n in succ] == [LAM_B]


def test_if_closure_takes_then_only():
    succ = ext_step(_if_state(parse("(lambda (t) t)")), P0)
    assert [n.control for n in succ] == [LAM_A]


def test_if_pushes_frame_and_evaluates_test():
    e = parse("(if #f (lambda (a) a) (lambda (b) b))")
    (n,) = ext_step(ext_inject(e, P0), P0)
    assert n.control == e.test
    assert n.store.get(n.kont) == {IfK(e.then, e.orelse, EMPTY_ENV, A_MT)}


@pytest.mark.parametrize("olds", [1, 2, 3])
def test_set_successors_match_old_values(olds):
    x = Addr(("v", "x"))
    lams = [parse(f"(lambda (q{i}) q{i})") for i in range(olds)]
    b = Addr(("k", 5))
    store = Store.of((A_MT, MT), (b, SetK(x, A_MT)), *((x, Clo(f, EMPTY_ENV)) for f in lams))
    new = parse("(lambda (n) n)")
    succ = ext_step(State(new, EMPTY_ENV, store, b, T0), P0)
    assert len(succ) == olds
    assert {n.control for n in succ} == set(lams)
    assert all(Clo(new, EMPTY_ENV) in n.store.get(x) for n in succ)


def test_set_returns_previous_value_concretely():
    tr = control.ext_trace(parse("((lambda (x) (set! x (lambda (y) y))) (lambda (z) z))"), 200)
    assert tr.status == "final"
    assert unparse(tr.last.control) == "(lambda (z) z)"


def test_assignment_is_visible_afterwards():
    tr = control.ext_trace(parse(support.source("ext", "set-basic")), 200)
    assert unparse(tr.last.control) == "(lambda (y) y)"


def _finals(g):
    return [g.states[i] for i in g.terminals if "final" in control.classify(g.states[i])]


def test_callcc_escape_covered_at_k1():
    e = parse(support.source("ext", "callcc-escape"))
    tr = control.ext_trace(e, 200)
    assert tr.status == "final" and unparse(tr.last.control) == "(lambda (y) y)"
    g = control.ext_aval(e, P1)
    hat = alpha(tr.last, P1)
    assert any(ordering_leq(hat, s) for s in g.states)
    assert any(s.control == tr.last.control for s in _finals(g))


def test_continuation_invocation_is_abortive():
    e = parse(support.source("ext", "callcc-abort"))
    tr = control.ext_trace(e, 200)
    assert tr.status == "final"
    assert unparse(tr.last.control) == "(lambda (a) a)"
    # the pending application to (lambda (b) b) never happens
    lam_b = e.arg.body.arg
    assert all(s.control != lam_b.body for s in tr.states)


def test_callcc_reentry_runs_conditional_twice():
    e = parse(support.source("ext", "callcc-reenter"))
    tr = control.ext_trace(e, 1000)
    assert tr.status == "final"
    ifs = [s for s in tr.states if s.control == e.fn.body.fn.body]
    assert len(ifs) == 2


def test_callcc_on_callcc_is_stuck():
    tr = control.ext_trace(parse(support.source("ext", "callcc-bare")), 100)
    assert tr.status == "stuck"


@pytest.mark.parametrize(
    "name,status,result",
    [
        ("catch-throw", "final", "(lambda (v) v)"),
        ("catch-no-throw", "final", "(lambda (a) a)"),
        ("nested-inner", "final", "(lambda (v) v)"),
        ("rethrow", "final", "(lambda (w) w)"),
        ("handler-result-used", "final", "(lambda (b) b)"),
        ("if-catch", "final", "(lambda (b) b)"),
        ("uncaught", "uncaught", None),
        ("throw-after-catch", "uncaught", None),
    ],
)
def test_ceshk_examples(name, status, result):
    tr = control.ceshk_trace(parse(support.source("exc", name)), 500)
    if status == "final":
        assert tr.status == "final"
        assert unparse(tr.last.control) == result
    else:
        assert "uncaught" in control.classify(tr.last)


def test_catch_installs_handler_with_fresh_local_continuation():
    e = parse(support.source("exc", "catch-throw"))
    s = ceshk_inject(e, P0)
    (n,) = ceshk_step(s, P0)
    assert n.control == e.body and n.kont == A_MT and n.handler != A_MT
    assert n.store.get(n.handler) == {Hn(e.handler, EMPTY_ENV, A_MT, A_MT)}
    assert MT in n.store.get(A_MT)


def test_throw_with_two_handlers_forks():
    e = parse("(throw (lambda (v) v))")
    h = Addr(("h", 1))
    store = Store.of((A_MT, MT), (h, Hn(LAM_A, EMPTY_ENV, A_MT, A_MT)), (h, Hn(LAM_B, EMPTY_ENV, A_MT, A_MT)))
    succ = ceshk_step(HState(e, EMPTY_ENV, store, h, A_MT, T0), P0)
    assert {n.control for n in succ} == {LAM_A.body, LAM_B.body}
    assert all(n.handler == A_MT for n in succ)


def test_value_at_empty_local_continuation_pops_handler():
    h, k = Addr(("h", 1)), Addr(("k", 2))
    store = Store.of((A_MT, MT), (h, Hn(LAM_A, EMPTY_ENV, k, A_MT)))
    (n,) = ceshk_step(HState(LAM_B, EMPTY_ENV, store, h, A_MT, T0), P0)
    assert (n.control, n.handler, n.kont) == (LAM_B, A_MT, k)


def test_uncaught_is_classified():
    s = ceshk_inject(parse("(throw (lambda (v) v))"), P0)
    assert ceshk_step(s, P0) == []
    assert control.classify(s) == {"uncaught"}


@pytest.mark.parametrize("name,e", support.load("exc"), ids=lambda v: v if isinstance(v, str) else "")
def test_recursive_ceshk_agrees_with_pointer_machine(name, e):
    rec = control.ceshk_rec_run(e, 500)
    ptr = control.ceshk_trace(e, 500)
    want = ptr.status if ptr.status != "stuck" else sorted(control.classify(ptr.last) or {"stuck"})[0]
    assert rec.status == want
    if rec.status == "final":
        assert rec.last.control == ptr.last.control


def test_handler_facts_for_nested_catch():
    e = parse(support.source("exc", "nested-inner"))
    g = control.ceshk_aval(e, P0)
    facts = analysis.handler_facts(g.states, Program.of(e))
    inner = e.body
    (throw_label,) = facts
    assert facts[throw_label] == [inner.label]


def test_handler_facts_for_rethrow():
    e = parse(support.source("exc", "rethrow"))
    facts = analysis.handler_facts(control.ceshk_aval(e, P0).states, Program.of(e))
    assert sorted(map(tuple, facts.values())) == [(e.label,), (e.body.label,)]


def test_escape_facts_callcc_escape():
    e = parse(support.source("ext", "callcc-escape"))
    facts = analysis.escape_facts(control.ext_aval(e, P0).states, Program.of(e))
    assert facts == {e.fn.label: [e.arg.body.label]}


@pytest.mark.parametrize("name,e", support.load("ext"), ids=lambda v: v if isinstance(v, str) else "")
def test_extended_corpus_ends_as_expected(name, e):
    tr = control.ext_trace(e, 1000)
    assert tr.status == ("stuck" if name == "callcc-bare" else "final")
