"""The abstract time-stamped CESK* machine with the k-CFA tick/alloc, the
abstraction map, and the decidability and soundness harnesses."""

from __future__ import annotations

from dataclasses import replace

from .concrete import (
    MT,
    Ar,
    Clo,
    Fn,
    State,
    Trace,
    check_closed,
    cesk_star_t_step,
    is_value,
    run,
    star_final,
)
from .core import A_MT, EMPTY_ENV, KCFA, T0, Addr, Store
from .engine import Abstraction, Graph, SoundnessReport, explore, leq, simulate
from .syntax import App, Expr, Lam, Ref


def call_site(kont_addr) -> int | None:
    """Label recorded when entering a procedure through the frame at ``kont_addr``.

    Frames are allocated at ``("k", label)`` sites, so the site label names the
    call uniquely; integer addresses carry no label.
    """
    return kont_addr.label if isinstance(kont_addr, Addr) else None


def alloc(s: State, kappa, p: KCFA):
    c = s.control
    if isinstance(c, App):
        return p.alloc(("k", c.fn.label), s.time)
    if isinstance(kappa, Ar):
        return p.alloc(("k", kappa.expr.label), s.time)
    if isinstance(kappa, Fn) and isinstance(kappa.fn, Lam):
        return p.alloc(("v", kappa.fn.var), s.time)
    return None


def tick(s: State, kappa, p: KCFA):
    c = s.control
    if isinstance(c, App):
        return p.push(s.time, c.label)
    if isinstance(kappa, Fn):
        return p.call(s.time, call_site(s.kont))
    return p.tick(s.time)


def inject(e: Expr, p: KCFA | None = None) -> State:
    check_closed(e)
    return State(e, EMPTY_ENV, Store.of((A_MT, MT)), A_MT, T0)


def lookup(s: State, p: KCFA) -> list:
    addr = s.env.get(s.control.name)
    if addr is None:
        return []
    u = tick(s, None, p)
    return [replace(s, control=v.value, env=v.env, time=u) for v in s.store.get(addr) if isinstance(v, Clo)]


def step_app(s: State, p: KCFA) -> State:
    c = s.control
    b = alloc(s, None, p)
    p.fresh(s.store, b)
    return replace(s, control=c.fn, store=s.store.join((b, Ar(c.arg, s.env, s.kont))), kont=b, time=tick(s, None, p))


def step_value(s: State, kappa, p: KCFA) -> list:
    """Successors of a value state for one continuation choice ``kappa``.

    Successors are built with ``replace`` so extended state shapes (extra
    registers such as a handler) pass through unchanged.
    """
    v = s.control
    if isinstance(kappa, Ar):
        b = alloc(s, kappa, p)
        p.fresh(s.store, b)
        frame = Fn(v, s.env, kappa.next)
        return [replace(s, control=kappa.expr, env=kappa.env, store=s.store.join((b, frame)), kont=b, time=tick(s, kappa, p))]
    if isinstance(kappa, Fn) and isinstance(kappa.fn, Lam):
        lam = kappa.fn
        b = alloc(s, kappa, p)
        p.fresh(s.store, b)
        env = kappa.env.extend(lam.var, b)
        store = s.store.join((b, Clo(v, s.env)))
        return [replace(s, control=lam.body, env=env, store=store, kont=kappa.next, time=tick(s, kappa, p))]
    return []


def step(s: State, p: KCFA) -> list:
    """All successors of an abstract CESK* state (one per store choice)."""
    c = s.control
    if isinstance(c, Ref):
        return lookup(s, p)
    if isinstance(c, App):
        return [step_app(s, p)]
    if is_value(c):
        out = []
        for kappa in s.store.get(s.kont):
            out.extend(step_value(s, kappa, p))
        return out
    return []


def aval(e: Expr, p: KCFA, gc: bool = False) -> Graph:
    """Reachable abstract states and transitions from the injected state."""
    init = inject(e, p)
    if gc:
        from .gc import collect

        return explore(collect(init), lambda s: [collect(n) for n in step(s, p)])
    return explore(init, lambda s: step(s, p))


def alpha(x, p: KCFA):
    """Abstraction map under the truncation ``p.k``."""
    return Abstraction(p)(x)


def ordering_leq(s1, s2) -> bool:
    return leq(s1, s2)


class KCfaPolicy:
    """Concrete k-CFA tick/alloc for the time-stamped CESK* machine.

    Contours are never truncated and times carry a step serial, so every
    allocation is fresh.
    """

    t0 = T0
    a0 = A_MT

    def __init__(self):
        self.p = KCFA.exact()

    def tick(self, s: State):
        kappa = s.store.only(s.kont) if is_value(s.control) else None
        return tick(s, kappa, self.p)

    def alloc(self, s: State):
        kappa = s.store.only(s.kont) if is_value(s.control) else None
        return alloc(s, kappa, self.p)


def concrete_trace(e: Expr, fuel: int) -> Trace:
    """Concrete time-stamped CESK* run under the exact k-CFA instantiation."""
    from .concrete import cesk_star_t_inject

    policy = KCfaPolicy()
    return run(cesk_star_t_inject(e, policy), lambda s: cesk_star_t_step(s, policy), star_final, fuel)


def soundness_check(e: Expr, p: KCFA, fuel: int = 500, graph: Graph | None = None) -> SoundnessReport:
    trace = concrete_trace(e, fuel)
    graph = graph if graph is not None else aval(e, p)
    return simulate(trace.states, graph, p)
