"""Randomised properties over generated closed λ-terms."""

from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from aam import abstract, concrete, lazy
from aam.concrete import MT, Clo, cesk_star_t_step
from aam.core import EMPTY_ENV, KCFA, Store
from aam.engine import StateLimitExceeded, explore
from aam.gc import collect, commutes, is_stack_like
from aam.syntax import parse, unparse

import support

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])

terms = st.builds(lambda rng, d: support.random_term(rng, d), st.randoms(use_true_random=False), st.integers(1, 5))


@SETTINGS
@given(terms)
def test_round_trip(e):
    assert parse(unparse(e)) == e


@SETTINGS
@given(terms)
def test_strict_machines_agree(e):
    rep = concrete.lockstep_check(e, 300)
    assert rep.agreed, str(rep)


@SETTINGS
@given(terms)
def test_lazy_machines_agree(e):
    agreed, steps, status = lazy.lockstep_check(e, 300)
    assert agreed, (steps, status)


@SETTINGS
@given(terms)
def test_abstract_covers_concrete_at_k0(e):
    p = KCFA.abstract(0)
    try:
        # per-state stores can blow up combinatorially; skip such terms
        g = explore(abstract.inject(e, p), lambda s: abstract.step(s, p), limit=20000)
    except StateLimitExceeded:
        assume(False)
    rep = abstract.soundness_check(e, p, 200, graph=g)
    assert rep.ok, str(rep)


@SETTINGS
@given(terms, st.integers(0, 60))
def test_collect_is_idempotent_and_commutes(e, n):
    policy = abstract.KCfaPolicy()
    s = abstract.concrete_trace(e, n).last
    c = collect(s)
    assert collect(c) == c
    assert set(c.store) <= set(s.store)

    def step(t):
        nxt = cesk_star_t_step(t, policy)
        return [] if nxt is None else [nxt]

    assert commutes(s, step)
    assert is_stack_like(c)


lams = st.sampled_from([parse(t) for t in ("(lambda (a) a)", "(lambda (b) (b b))", "(lambda (c) (lambda (d) c))")])
cells = st.lists(st.tuples(st.integers(0, 3), lams.map(lambda f: Clo(f, EMPTY_ENV))), max_size=6)
stores = cells.map(lambda pairs: Store.of(*pairs))


@SETTINGS
@given(stores, stores, stores)
def test_store_join_laws(a, b, c):
    assert a.join_store(b) == b.join_store(a)
    assert a.join_store(a) == a
    assert a.join_store(b).join_store(c) == a.join_store(b.join_store(c))
    assert a.leq(a.join_store(b)) and b.leq(a.join_store(b))
    assert Store.empty().leq(a)


@SETTINGS
@given(stores)
def test_restrict_then_leq(a):
    keep = [x for x in a if x % 2 == 0]
    r = a.restrict(keep)
    assert r.leq(a) and set(r) == set(keep)


def test_store_of_mt():
    assert Store.of((0, MT)).get(0) == {MT}
