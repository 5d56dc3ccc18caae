"""Conditionals, assignment, first-class continuations and exceptions.

The extended machine adds ``if``/``set!``/``callcc`` to the pointer-refined
CESK* rules; the handler machine adds a handler register on top of that.
Both run concretely (``KCFA.exact()``) or abstractly (``KCFA.abstract(k)``)
from the same rules. ``CESHK`` is the recursive-continuation exception machine.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Any, Hashable

from . import abstract as base
from .concrete import (
    MT,
    Clo,
    Fn,
    KAddr,
    KAr,
    KFn,
    KMt,
    Mt,
    State,
    Trace,
    check_closed,
    env_refs,
    fresh_int,
    is_value,
    run,
    show,
    show_env,
)
from .core import A_MT, EMPTY_ENV, KCFA, T0, Env, Store, record
from .engine import Graph, SoundnessReport, explore, simulate
from .syntax import App, Callcc, Catch, Expr, FalseLit, If, Lam, Ref, SetBang, Throw, free_vars

# -- frames ---------------------------------------------------------------


@record
class IfK:
    then: Expr
    orelse: Expr
    env: Env
    next: Hashable

    def refs(self) -> set:
        return {self.next} | env_refs(self.env, free_vars(self.then) | free_vars(self.orelse))

    def konts(self) -> tuple:
        return (self.next,)


@record
class SetK:
    target: Hashable
    next: Hashable

    def refs(self) -> set:
        return {self.target, self.next}

    def konts(self) -> tuple:
        return (self.next,)


@record
class Hn:
    """Handler frame: handler procedure, its env, the saved local
    continuation and the enclosing handler."""

    handler: Lam
    env: Env
    kont: Hashable
    next: Hashable

    def refs(self) -> set:
        return {self.kont, self.next} | env_refs(self.env, free_vars(self.handler))

    def konts(self) -> tuple:
        return (self.kont,)


@record
class HState:
    control: Any
    env: Env
    store: Store
    handler: Hashable
    kont: Hashable
    time: Any = None

    def __str__(self):
        return (
            f"<{show(self.control)}, {show_env(self.env)}, "
            f"|σ|={0 if self.store is None else len(self.store)}, h={self.handler}, {self.kont}, {self.time}>"
        )


# -- extended CESK* ---------------------------------------------------------


def _frame_site(s) -> tuple | None:
    c = s.control
    if isinstance(c, If):
        return ("k", c.test.label)
    if isinstance(c, SetBang):
        return ("k", c.expr.label)
    return None


def ext_value(s, kappa, p: KCFA) -> list:
    """Value rows for one continuation choice, including the base rows."""
    v = s.control
    if isinstance(kappa, IfK):
        branch = kappa.orelse if isinstance(v, FalseLit) else kappa.then
        return [replace(s, control=branch, env=kappa.env, kont=kappa.next, time=p.tick(s.time))]
    if isinstance(kappa, SetK):
        store = p.write(s.store, kappa.target, Clo(v, s.env))
        u = p.tick(s.time)
        return [
            replace(s, control=old.value, env=old.env, store=store, kont=kappa.next, time=u)
            for old in s.store.get(kappa.target)
            if isinstance(old, Clo)
        ]
    if isinstance(kappa, Fn) and isinstance(kappa.fn, Callcc):
        here = KAddr(kappa.next, kappa.fn.label)
        if isinstance(v, Lam):
            b = p.alloc(("v", v.var), s.time)
            p.fresh(s.store, b)
            store = s.store.join((b, Clo(here, EMPTY_ENV)))
            u = p.call(s.time, base.call_site(s.kont))
            return [replace(s, control=v.body, env=s.env.extend(v.var, b), store=store, kont=kappa.next, time=u)]
        if isinstance(v, KAddr):
            return [replace(s, control=here, env=EMPTY_ENV, kont=v.addr, time=p.tick(s.time))]
        return []
    if isinstance(kappa, Fn) and isinstance(kappa.fn, KAddr):
        return [replace(s, kont=kappa.fn.addr, time=p.tick(s.time))]
    return base.step_value(s, kappa, p)


def ext_step(s, p: KCFA) -> list:
    c = s.control
    site = _frame_site(s)
    if site is not None:
        b = p.alloc(site, s.time)
        p.fresh(s.store, b)
        if isinstance(c, If):
            frame, sub = IfK(c.then, c.orelse, s.env, s.kont), c.test
        else:
            frame, sub = SetK(s.env[c.var], s.kont), c.expr
        return [replace(s, control=sub, store=s.store.join((b, frame)), kont=b, time=p.tick(s.time))]
    if is_value(c):
        out = []
        for kappa in s.store.get(s.kont):
            out.extend(ext_value(s, kappa, p))
        return out
    return base.step(s, p)


def ext_inject(e: Expr, p: KCFA | None = None) -> State:
    return base.inject(e, p)


def ext_final(s) -> bool:
    return is_value(s.control) and any(isinstance(k, Mt) for k in s.store.get(s.kont))


def ext_aval(e: Expr, p: KCFA, gc: bool = False) -> Graph:
    return _aval(ext_inject(e, p), lambda s: ext_step(s, p), gc)


def _aval(init, step, gc: bool) -> Graph:
    if gc:
        from .gc import collect

        return explore(collect(init), lambda s: [collect(n) for n in step(s)])
    return explore(init, step)


def concrete_run(init, step, fuel: int) -> Trace:
    """Run a concrete (``KCFA.exact``) instance of one of these machines."""

    def one(s):
        succ = step(s)
        return succ[0] if succ else None

    return run(init, one, lambda s: classify(s) == {"final"}, fuel)


def ext_trace(e: Expr, fuel: int) -> Trace:
    p = KCFA.exact()
    return concrete_run(ext_inject(e, p), lambda s: ext_step(s, p), fuel)


# -- pointer-refined / abstract CESHK* --------------------------------------


def ceshk_inject(e: Expr, p: KCFA | None = None) -> HState:
    check_closed(e)
    return HState(e, EMPTY_ENV, Store.of((A_MT, MT)), A_MT, A_MT, T0)


def ceshk_step(s: HState, p: KCFA) -> list:
    c = s.control
    if isinstance(c, Throw):
        out = []
        for eta in s.store.get(s.handler):
            if isinstance(eta, Hn):
                lam = eta.handler
                b = p.alloc(("v", lam.var), s.time)
                p.fresh(s.store, b)
                store = s.store.join((b, Clo(c.expr, s.env)))
                u = p.call(s.time, c.label)
                out.append(HState(lam.body, eta.env.extend(lam.var, b), store, eta.next, eta.kont, u))
        return out
    if isinstance(c, Catch):
        b = p.alloc(("h", c.label), s.time)
        p.fresh(s.store, b)
        store = s.store.join((b, Hn(c.handler, s.env, s.kont, s.handler)), (A_MT, MT))
        return [HState(c.body, s.env, store, b, A_MT, p.tick(s.time))]
    if is_value(c):
        out = []
        for kappa in s.store.get(s.kont):
            if isinstance(kappa, Mt):
                for eta in s.store.get(s.handler):
                    if isinstance(eta, Hn):
                        out.append(replace(s, handler=eta.next, kont=eta.kont, time=p.tick(s.time)))
            else:
                out.extend(ext_value(s, kappa, p))
        return out
    return ext_step(s, p)


def ceshk_aval(e: Expr, p: KCFA, gc: bool = False) -> Graph:
    return _aval(ceshk_inject(e, p), lambda s: ceshk_step(s, p), gc)


def ceshk_trace(e: Expr, fuel: int) -> Trace:
    p = KCFA.exact()
    return concrete_run(ceshk_inject(e, p), lambda s: ceshk_step(s, p), fuel)


def classify(s) -> set:
    """Ways the computation can end at ``s`` (empty if it must continue).

    ``final``: a value returned to the empty continuation with no handler left;
    ``uncaught``: a throw with the empty handler; ``fail``: a security failure;
    anything else with no successor is ``stuck`` (decided by the caller).
    """
    from .security import is_fail_state

    out = set()
    c = s.control
    handlers = s.store.get(s.handler) if isinstance(s, HState) else (MT,)
    if is_value(c):
        if any(isinstance(k, Mt) for k in s.store.get(s.kont)) and any(isinstance(h, Mt) for h in handlers):
            out.add("final")
    elif isinstance(c, Throw) and any(isinstance(h, Mt) for h in handlers):
        out.add("uncaught")
    elif is_fail_state(s):
        out.add("fail")
    return out


def soundness(e: Expr, p: KCFA, family: str = "ceshk", fuel: int = 500, graph: Graph | None = None) -> SoundnessReport:
    trace = ceshk_trace(e, fuel) if family == "ceshk" else ext_trace(e, fuel)
    if graph is None:
        graph = ceshk_aval(e, p) if family == "ceshk" else ext_aval(e, p)
    return simulate(trace.states, graph, p)


# -- recursive CESHK ----------------------------------------------------------


@record
class KIf:
    then: Expr
    orelse: Expr
    env: Env
    next: Any


@record
class KSet:
    target: int
    next: Any


@record
class RHn:
    handler: Lam
    env: Env
    kont: Any
    next: Any


@record
class CESHKState:
    control: Any
    env: Env
    store: Store
    handler: Any
    kont: Any

    def __str__(self):
        return f"<{show(self.control)}, {show_env(self.env)}, |σ|={len(self.store)}>"


def ceshk_rec_inject(e: Expr) -> CESHKState:
    check_closed(e)
    return CESHKState(e, EMPTY_ENV, Store.empty(), KMt(), KMt())


def ceshk_rec_step(s: CESHKState) -> CESHKState | None:
    """One step of the recursive CESHK machine (base rows, ``if``, ``set!``, exceptions)."""
    c, env, st, h, k = s.control, s.env, s.store, s.handler, s.kont
    if isinstance(c, Ref):
        if c.name not in env:
            return None
        clo = st.only(env[c.name])
        return CESHKState(clo.value, clo.env, st, h, k)
    if isinstance(c, App):
        return CESHKState(c.fn, env, st, h, KAr(c.arg, env, k))
    if isinstance(c, If):
        return CESHKState(c.test, env, st, h, KIf(c.then, c.orelse, env, k))
    if isinstance(c, SetBang):
        return CESHKState(c.expr, env, st, h, KSet(env[c.var], k))
    if isinstance(c, Throw):
        if not isinstance(h, RHn):
            return None
        lam = h.handler
        a = fresh_int(st)
        return CESHKState(lam.body, h.env.extend(lam.var, a), st.update(a, (Clo(c.expr, env),)), h.next, h.kont)
    if isinstance(c, Catch):
        return CESHKState(c.body, env, st, RHn(c.handler, env, k, h), KMt())
    if not is_value(c):
        return None
    if isinstance(k, KMt):
        if isinstance(h, RHn):
            return CESHKState(c, env, st, h.next, h.kont)
        return None
    if isinstance(k, KAr):
        return CESHKState(k.expr, k.env, st, h, KFn(c, env, k.next))
    if isinstance(k, KFn) and isinstance(k.fn, Lam):
        lam = k.fn
        a = fresh_int(st)
        return CESHKState(lam.body, k.env.extend(lam.var, a), st.update(a, (Clo(c, env),)), h, k.next)
    if isinstance(k, KIf):
        return CESHKState(k.orelse if isinstance(c, FalseLit) else k.then, k.env, st, h, k.next)
    if isinstance(k, KSet):
        old = st.only(k.target)
        return CESHKState(old.value, old.env, st.update(k.target, (Clo(c, env),)), h, k.next)
    return None


def ceshk_rec_status(s: CESHKState) -> str:
    if is_value(s.control) and isinstance(s.kont, KMt) and isinstance(s.handler, KMt):
        return "final"
    if isinstance(s.control, Throw) and isinstance(s.handler, KMt):
        return "uncaught"
    return "stuck"


def ceshk_rec_run(e: Expr, fuel: int) -> Trace:
    tr = run(ceshk_rec_inject(e), ceshk_rec_step, lambda s: ceshk_rec_status(s) == "final", fuel)
    if tr.status == "stuck":
        tr.status = ceshk_rec_status(tr.last)
    return tr
