import random

import pytest

from aam import abstract
from aam.concrete import MT, Ar, Clo, Fn, KAddr, State, cesk_star_t_step
from aam.core import A_MT, EMPTY_ENV, KCFA, T0, Addr, Store
from aam.gc import DanglingAddressError, collect, commutes, gc_reachable, is_stack_like, live_locations, refs, step_gc
from aam.syntax import parse

import support

P0 = KCFA.abstract(0)
OMEGA = "((lambda (x) (x x)) (lambda (x) (x x)))"


def test_live_locations_of_mt_is_empty():
    assert refs(MT) == set()
    assert live_locations(MT, Store.empty()) == set()


def test_live_locations_of_ar_frame():
    x = parse("(lambda (x) x)").body
    frame = Ar(x, EMPTY_ENV.extend("x", 7), "a")
    assert refs(frame) == {"a", 7}
    store = Store.of(("a", MT), (7, Clo(parse("(lambda (q) q)"), EMPTY_ENV)))
    assert live_locations(frame, store) == {"a", 7}


def test_env_entries_for_bound_variables_are_not_live():
    lam = parse("(lambda (x) x)")
    assert refs(lam, EMPTY_ENV.extend("x", 3)) == set()


def test_closed_expression_without_env_has_no_roots():
    assert refs(parse("((lambda (x) x) (lambda (y) y))")) == set()


def test_dangling_address_raises():
    with pytest.raises(DanglingAddressError):
        gc_reachable({"nowhere"}, Store.empty())


def test_gc_machine_on_empty_roots():
    trace: list = []
    assert gc_reachable(set(), Store.of((1, MT)), trace) == set()
    assert trace == []


def _chain_store():
    f = parse("(lambda (z) z)")
    return Store.of(
        ("a", Ar(f, EMPTY_ENV, "b")),
        ("b", Fn(f, EMPTY_ENV, "c")),
        ("c", MT),
        ("d", MT),
    )


def test_gc_machine_follows_chain_and_skips_garbage():
    trace: list = []
    assert gc_reachable({"a"}, _chain_store(), trace) == {"a", "b", "c"}
    grey, black = trace[-1]
    assert grey == set() and black == {"a", "b", "c"}
    assert all(prev[1] <= nxt[1] for prev, nxt in zip(trace, trace[1:]))  # black only grows


def test_collect_drops_unreachable_cells():
    f = parse("(lambda (z) z)")
    s = State(f, EMPTY_ENV, _chain_store(), "a", T0)
    c = collect(s)
    assert set(c.store) == {"a", "b", "c"}
    assert collect(c) == c


def test_collect_dead_argument():
    # after entering (lambda (u) (lambda (w) w)) the binding for u is dead
    e = parse("((lambda (u) (lambda (w) w)) (lambda (v) v))")
    s = abstract.inject(e, P0)
    while s.control != e.fn.body:
        (s,) = abstract.step(s, P0)
    assert Addr(("v", "u")) in s.store
    assert Addr(("v", "u")) not in collect(s).store


def test_collect_keeps_handler_register():
    from aam import control

    e = parse("(catch (throw (lambda (v) v)) (lambda (x) x))")
    (s,) = control.ceshk_step(control.ceshk_inject(e, P0), P0)
    c = collect(s)
    assert s.handler in c.store and c.store.get(s.handler) == s.store.get(s.handler)


def test_gc_never_grows_omega_at_k0():
    e = parse(OMEGA)
    plain = abstract.aval(e, P0)
    collected = abstract.aval(e, P0, gc=True)
    assert len(collected.states) <= len(plain.states)
    assert max(len(s.store) for s in collected.states) <= max(len(s.store) for s in plain.states)


def _exact_gc_run(e, steps):
    p = KCFA.exact()
    s = collect(abstract.inject(e, p))
    out = [s]
    for _ in range(steps):
        succ = step_gc(s, lambda t: abstract.step(t, p))
        if not succ:
            break
        (s,) = succ
        out.append(s)
    return out


@pytest.mark.parametrize("name,e", support.load("pure"), ids=lambda v: v if isinstance(v, str) else "")
def test_collected_concrete_runs_are_stack_like(name, e):
    for s in _exact_gc_run(e, 200):
        assert is_stack_like(s), str(s)


def test_joined_continuation_cell_is_not_stack_like():
    e = parse("((lambda (x) x) (lambda (y) y))")
    k = Addr(("k", 9))
    store = Store.of((A_MT, MT), (k, Ar(e.arg, EMPTY_ENV, A_MT)), (k, Fn(e.fn, EMPTY_ENV, A_MT)))
    assert not is_stack_like(State(e.fn, EMPTY_ENV, store, k, T0))


def test_live_captured_continuation_is_not_stack_like():
    e = parse("((lambda (x) x) (lambda (y) y))")
    k, v = Addr(("k", 9)), Addr(("v", "x"))
    store = Store.of((A_MT, MT), (k, Ar(e.arg, EMPTY_ENV, A_MT)), (v, Clo(KAddr(k, 0), EMPTY_ENV)))
    s = State(e.fn.body, EMPTY_ENV.extend("x", v), store, A_MT, T0)
    assert not is_stack_like(s)
    assert is_stack_like(State(e.fn, EMPTY_ENV, store, A_MT, T0))  # the capture is garbage here


def test_collect_commutes_with_concrete_steps():
    rng = random.Random(7)
    policy = abstract.KCfaPolicy()

    def step(t):
        n = cesk_star_t_step(t, policy)
        return [] if n is None else [n]

    checked = 0
    for _ in range(40):
        e = support.random_term(rng)
        tr = abstract.concrete_trace(e, rng.randrange(0, 40))
        s = tr.last
        assert collect(collect(s)) == collect(s)
        assert commutes(s, step)
        checked += 1
    assert checked == 40
