"""Stack inspection with continuation marks.

Marks are frozensets of ``(permission, "grant" | "deny")`` pairs with at most
one pair per permission. ``CM`` keeps a recursive marked continuation;
``CM*`` stores the marked ``mt``/``ar``/``fn`` frames and runs concretely or
abstractly from one rule set.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Any

from . import abstract as base
from .concrete import (
    MT,
    NO_MARKS,
    Ar,
    Clo,
    Eraser,
    Fn,
    Interner,
    Mt,
    State,
    Trace,
    check_closed,
    fresh_int,
    is_value,
    run,
    show,
    show_env,
)
from .core import A_FAIL, A_MT, EMPTY_ENV, KCFA, T0, Env, Store, record
from .engine import Graph, SoundnessReport, explore, simulate
from .syntax import App, Expr, Fail, Frame, Grant, Lam, Ref, Test, subexprs

GRANT, DENY = "grant", "deny"

# -- marks ------------------------------------------------------------------------


def mark_update(marks: frozenset, perms, flag: str) -> frozenset:
    perms = frozenset(perms)
    return frozenset((p, f) for p, f in marks if p not in perms) | {(p, flag) for p in perms}


def denied(marks: frozenset) -> frozenset:
    return frozenset(p for p, f in marks if f == DENY)


def granted(marks: frozenset) -> frozenset:
    return frozenset(p for p, f in marks if f == GRANT)


def universe_of(e: Expr, extra=()) -> frozenset:
    """Permissions mentioned anywhere in ``e``, plus ``extra``."""
    out = set(extra)
    for n in subexprs(e):
        if isinstance(n, (Grant, Test, Frame)):
            out |= n.perms
    return frozenset(out)


def ok(perms, kont, store: Store | None = None) -> bool:
    """Are ``perms`` enabled by the marked continuation ``kont``?

    With ``store`` given, ``kont`` is an address and frames are dereferenced
    through it (each cell must hold exactly one frame).
    """
    r = frozenset(perms)
    k = store.only(kont) if store is not None else kont
    while r:
        if r & denied(k.marks):
            return False
        if isinstance(k, (Mt, RMt)):
            return True
        r = r - granted(k.marks)
        k = store.only(k.next) if store is not None else k.next
    return True


def _search(perms, store: Store, a, want_ok: bool) -> bool:
    seen = set()
    todo = [(frozenset(perms), a)]
    while todo:
        r, a = todo.pop()
        if (r, a) in seen:
            continue
        seen.add((r, a))
        if not r:
            if want_ok:
                return True
            continue
        for k in store.get(a):
            if r & denied(k.marks):
                if not want_ok:
                    return True
                continue
            if isinstance(k, Mt):
                if want_ok:
                    return True
                continue
            todo.append((r - granted(k.marks), k.next))
    return False


def ok_star(perms, store: Store, a) -> bool:
    """Some path of frames from ``a`` through ``store`` enables ``perms``."""
    return _search(perms, store, a, True)


def fails_star(perms, store: Store, a) -> bool:
    """Some path of frames from ``a`` through ``store`` does not enable ``perms``."""
    return _search(perms, store, a, False)


# -- CM* ----------------------------------------------------------------------------


def inject(e: Expr, p: KCFA | None = None) -> State:
    check_closed(e)
    return State(e, EMPTY_ENV, Store.of((A_MT, MT)), A_MT, T0)


def _remark(s: State, perms, flag: str, body: Expr, p: KCFA) -> list:
    cell = s.store.get(s.kont)
    u = p.tick(s.time)
    out = []
    for k in cell:
        new = replace(k, marks=mark_update(k.marks, perms, flag))
        store = s.store.update(s.kont, (cell - {k}) | {new})
        out.append(replace(s, control=body, store=store, time=u))
    return out


def step(s: State, p: KCFA, universe: frozenset = frozenset()) -> list:
    c = s.control
    if isinstance(c, Fail):
        if s.kont == A_FAIL:
            return []
        return [replace(s, store=s.store.join((A_FAIL, MT)), kont=A_FAIL, time=p.tick(s.time))]
    if isinstance(c, Frame):
        return _remark(s, universe - c.perms, DENY, c.body, p)
    if isinstance(c, Grant):
        return _remark(s, c.perms, GRANT, c.body, p)
    if isinstance(c, Test):
        u = p.tick(s.time)
        out = []
        if ok_star(c.perms, s.store, s.kont):
            out.append(replace(s, control=c.then, time=u))
        if fails_star(c.perms, s.store, s.kont):
            out.append(replace(s, control=c.orelse, time=u))
        return out
    return base.step(s, p)


def is_fail_state(s) -> bool:
    if not isinstance(s.control, Fail):
        return False
    if isinstance(s, CMState):
        return isinstance(s.kont, RMt) and not s.kont.marks
    return s.kont == A_FAIL


def final(s: State) -> bool:
    return is_value(s.control) and any(isinstance(k, Mt) for k in s.store.get(s.kont))


def aval(e: Expr, p: KCFA, universe=None, gc: bool = False) -> Graph:
    universe = universe_of(e) if universe is None else frozenset(universe)
    init = inject(e, p)
    if gc:
        from .gc import collect

        return explore(collect(init), lambda s: [collect(n) for n in step(s, p, universe)])
    return explore(init, lambda s: step(s, p, universe))


def star_trace(e: Expr, fuel: int, universe=None) -> Trace:
    universe = universe_of(e) if universe is None else frozenset(universe)
    p = KCFA.exact()

    def one(s):
        succ = step(s, p, universe)
        return succ[0] if succ else None

    return run(inject(e, p), one, final, fuel)


def soundness(e: Expr, p: KCFA, universe=None, fuel: int = 500, graph: Graph | None = None) -> SoundnessReport:
    trace = star_trace(e, fuel, universe)
    return simulate(trace.states, graph if graph is not None else aval(e, p, universe), p)


def test_facts(graph: Graph) -> dict:
    """Per ``test`` label: ``enabled``, ``disabled`` or ``both`` branches reachable."""
    seen: dict = {}
    for s in graph.states:
        c = s.control
        if isinstance(c, Test):
            got = seen.setdefault(c.label, set())
            if ok_star(c.perms, s.store, s.kont):
                got.add("enabled")
            if fails_star(c.perms, s.store, s.kont):
                got.add("disabled")
    return {l: ("both" if len(b) == 2 else next(iter(b))) for l, b in sorted(seen.items()) if b}


# -- CM (recursive continuations) -------------------------------------------------


@record
class RMt:
    marks: frozenset = NO_MARKS


@record
class RAr:
    expr: Expr
    env: Env
    next: Any
    marks: frozenset = NO_MARKS


@record
class RFn:
    fn: Any
    env: Env
    next: Any
    marks: frozenset = NO_MARKS


@record
class CMState:
    control: Any
    env: Env
    store: Store
    kont: Any

    def __str__(self):
        return f"<{show(self.control)}, {show_env(self.env)}, |σ|={len(self.store)}>"


def cm_inject(e: Expr) -> CMState:
    check_closed(e)
    return CMState(e, EMPTY_ENV, Store.empty(), RMt())


def cm_step(s: CMState, universe: frozenset = frozenset()) -> CMState | None:
    c, env, st, k = s.control, s.env, s.store, s.kont
    if isinstance(c, Fail):
        if isinstance(k, RMt) and not k.marks:
            return None
        return CMState(c, env, st, RMt())
    if isinstance(c, Frame):
        return CMState(c.body, env, st, replace(k, marks=mark_update(k.marks, universe - c.perms, DENY)))
    if isinstance(c, Grant):
        return CMState(c.body, env, st, replace(k, marks=mark_update(k.marks, c.perms, GRANT)))
    if isinstance(c, Test):
        return CMState(c.then if ok(c.perms, k) else c.orelse, env, st, k)
    if isinstance(c, Ref):
        if c.name not in env:
            return None
        clo = st.only(env[c.name])
        return CMState(clo.value, clo.env, st, k)
    if isinstance(c, App):
        return CMState(c.fn, env, st, RAr(c.arg, env, k))
    if isinstance(c, Lam):
        if isinstance(k, RAr):
            return CMState(k.expr, k.env, st, RFn(c, env, k.next))
        if isinstance(k, RFn):
            lam = k.fn
            a = fresh_int(st)
            return CMState(lam.body, k.env.extend(lam.var, a), st.update(a, (Clo(c, env),)), k.next)
    return None


def cm_status(s: CMState) -> str:
    if isinstance(s.control, Lam) and isinstance(s.kont, RMt):
        return "final"
    if is_fail_state(s):
        return "fail"
    return "stuck"


def cm_run(e: Expr, fuel: int, universe=None) -> Trace:
    universe = universe_of(e) if universe is None else frozenset(universe)
    tr = run(cm_inject(e), lambda s: cm_step(s, universe), lambda s: cm_status(s) == "final", fuel)
    if tr.status == "stuck":
        tr.status = cm_status(tr.last)
    return tr


_FRAMES = (RMt, RAr, RFn, Mt, Ar, Fn)


class _MarkEraser(Eraser):
    """Erasure that keeps marks; frames are rebuilt on every mark update, so
    identity memoization stays valid."""

    def kont(self, k) -> int:
        if not isinstance(k, _FRAMES):
            k = self.deref(k)
        return self._memo(k, self._kont)

    def _kont(self, k) -> int:
        if isinstance(k, (RMt, Mt)):
            return self.intern(("mt", k.marks))
        if isinstance(k, (RAr, Ar)):
            return self.intern(("ar", k.marks, k.expr, self.env(k.env), self.kont(k.next)))
        return self.intern(("fn", k.marks, self.value(k.fn), self.env(k.env), self.kont(k.next)))


def lockstep_check(e: Expr, fuel: int = 1000, universe=None) -> tuple[bool, int, str]:
    """Run CM and concrete CM* together; returns (agreed, steps, status)."""
    universe = universe_of(e) if universe is None else frozenset(universe)
    p = KCFA.exact()
    intern = Interner()
    cur = [cm_inject(e), inject(e, p)]
    er1 = _MarkEraser(intern, lambda a: cur[0].store.only(a))
    er2 = _MarkEraser(intern, lambda a: cur[1].store.only(a))
    steps = 0
    while True:
        s1, s2 = cur
        if er1.state(s1) != er2.state(s2):
            return False, steps, "diverged"
        if steps >= fuel:
            return True, steps, "fuel-exhausted"
        n1 = cm_step(s1, universe)
        n2 = step(s2, p, universe)
        if n1 is None or not n2:
            if (n1 is None) != (not n2):
                return False, steps, "diverged"
            return True, steps, cm_status(s1)
        cur[:] = [n1, n2[0]]
        steps += 1
