"""Call-by-need Krivine machines.

``LK`` keeps a recursive continuation and integer addresses. ``LK*`` stores
continuations and runs concretely or abstractly from one rule set, in three
variants: ``baseline``, ``optimized`` (operand specialization) and
``postponed`` (thunks built when the operator is applied).
"""

from __future__ import annotations

from dataclasses import replace
from typing import Any, Hashable

from .abstract import call_site
from .concrete import MT, Mt, State, Trace, check_closed, env_refs, fresh_int, run, show, show_env
from .core import A_MT, EMPTY_ENV, KCFA, T0, Addr, Env, Store, record
from .engine import Graph, SoundnessReport, explore, simulate
from .syntax import App, Expr, Lam, Ref, Value, free_vars

VARIANTS = ("baseline", "optimized", "postponed")

# -- storables ------------------------------------------------------------------


@record
class D:
    """Delayed computation (thunk)."""

    expr: Expr
    env: Env

    def refs(self) -> set:
        return env_refs(self.env, free_vars(self.expr))

    def konts(self) -> tuple:
        return ()


@record
class C:
    """Computed value."""

    value: Lam
    env: Env

    def refs(self) -> set:
        return env_refs(self.env, free_vars(self.value))

    def konts(self) -> tuple:
        return ()


@record
class C1:
    """Write the returned value back to ``target``."""

    target: Hashable
    next: Hashable

    def refs(self) -> set:
        return {self.target, self.next}

    def konts(self) -> tuple:
        return (self.next,)


@record
class C2:
    """Apply the returned operator to the argument stored at ``arg``."""

    arg: Hashable
    next: Hashable

    def refs(self) -> set:
        return {self.arg, self.next}

    def konts(self) -> tuple:
        return (self.next,)


@record
class C2Post:
    """Apply the returned operator to a not-yet-allocated argument thunk."""

    expr: Expr
    env: Env
    next: Hashable

    def refs(self) -> set:
        return {self.next} | env_refs(self.env, free_vars(self.expr))

    def konts(self) -> tuple:
        return (self.next,)


# -- LK* -------------------------------------------------------------------------


def inject(e: Expr, p: KCFA | None = None) -> State:
    check_closed(e)
    return State(e, EMPTY_ENV, Store.of((A_MT, MT)), A_MT, T0)


def _fresh(p: KCFA, s: State, site: tuple):
    a = p.alloc(site, s.time)
    p.fresh(s.store, a)
    return a


def step(s: State, p: KCFA, variant: str = "baseline") -> list:
    c, env, st = s.control, s.env, s.store
    if isinstance(c, Ref):
        addr = env.get(c.name)
        if addr is None:
            return []
        u = p.tick(s.time)
        out = []
        for x in st.get(addr):
            if isinstance(x, D):
                b = _fresh(p, s, ("k", c.label))
                out.append(replace(s, control=x.expr, env=x.env, store=st.join((b, C1(addr, s.kont))), kont=b, time=u))
            elif isinstance(x, C):
                out.append(replace(s, control=x.value, env=x.env, time=u))
        return out
    if isinstance(c, App):
        u = p.push(s.time, c.label)
        b = _fresh(p, s, ("k", c.fn.label))
        arg = c.arg
        if variant == "postponed":
            store = st.join((b, C2Post(arg, env, s.kont)))
        elif variant == "optimized" and isinstance(arg, Ref):
            if arg.name not in env:
                return []
            store = st.join((b, C2(env[arg.name], s.kont)))
        else:
            cell = _fresh(p, s, ("d", arg.label))
            stored = C(arg, env) if variant == "optimized" and isinstance(arg, Value) else D(arg, env)
            store = st.join((cell, stored), (b, C2(cell, s.kont)))
        return [replace(s, control=c.fn, store=store, kont=b, time=u)]
    if isinstance(c, Value):
        out = []
        for kappa in st.get(s.kont):
            if isinstance(kappa, C1):
                store = p.write(st, kappa.target, C(c, env))
                out.append(replace(s, store=store, kont=kappa.next, time=p.tick(s.time)))
            elif isinstance(kappa, C2) and isinstance(c, Lam):
                u = p.call(s.time, call_site(s.kont))
                out.append(replace(s, control=c.body, env=env.extend(c.var, kappa.arg), kont=kappa.next, time=u))
            elif isinstance(kappa, C2Post) and isinstance(c, Lam):
                b = _fresh(p, s, ("d", kappa.expr.label))
                u = p.call(s.time, call_site(s.kont))
                store = st.join((b, D(kappa.expr, kappa.env)))
                out.append(replace(s, control=c.body, env=env.extend(c.var, b), store=store, kont=kappa.next, time=u))
        return out
    return []


def final(s: State) -> bool:
    return isinstance(s.control, Value) and any(isinstance(k, Mt) for k in s.store.get(s.kont))


def aval(e: Expr, p: KCFA, variant: str = "baseline", gc: bool = False) -> Graph:
    init = inject(e, p)
    if gc:
        from .gc import collect

        return explore(collect(init), lambda s: [collect(n) for n in step(s, p, variant)])
    return explore(init, lambda s: step(s, p, variant))


def star_trace(e: Expr, fuel: int, variant: str = "baseline") -> Trace:
    """Concrete pointer-refined LK* run."""
    p = KCFA.exact()

    def one(s):
        succ = step(s, p, variant)
        return succ[0] if succ else None

    return run(inject(e, p), one, final, fuel)


def soundness(e: Expr, p: KCFA, variant: str = "baseline", fuel: int = 500, graph: Graph | None = None) -> SoundnessReport:
    trace = star_trace(e, fuel, variant)
    return simulate(trace.states, graph if graph is not None else aval(e, p, variant), p)


def thunk_facts(graph: Graph) -> dict:
    """Per thunk-site label: ``forced`` if some reachable state forces a thunk
    allocated there, otherwise ``never-forced``."""
    sites, forced = set(), set()
    for s in graph.states:
        for a, vals in s.store.items():
            if isinstance(a, Addr) and a.site[0] == "d" and any(isinstance(v, D) for v in vals):
                sites.add(a.label)
        if isinstance(s.control, Ref):
            addr = s.env.get(s.control.name)
            if isinstance(addr, Addr) and addr.site[0] == "d" and any(isinstance(v, D) for v in s.store.get(addr)):
                forced.add(addr.label)
    return {l: ("forced" if l in forced else "never-forced") for l in sorted(sites)}


# -- LK (recursive continuations) ------------------------------------------------


@record
class KC1:
    target: int
    next: Any


@record
class KC2:
    arg: int
    next: Any


@record
class KMt0:
    pass


@record
class LKState:
    control: Any
    env: Env
    store: Store
    kont: Any

    def __str__(self):
        return f"<{show(self.control)}, {show_env(self.env)}, |σ|={len(self.store)}>"


def lk_inject(e: Expr) -> LKState:
    check_closed(e)
    return LKState(e, EMPTY_ENV, Store.empty(), KMt0())


def lk_step(s: LKState) -> LKState | None:
    c, env, st, k = s.control, s.env, s.store, s.kont
    if isinstance(c, Ref):
        if c.name not in env:
            return None
        a = env[c.name]
        x = st.only(a)
        if isinstance(x, D):
            return LKState(x.expr, x.env, st, KC1(a, k))
        return LKState(x.value, x.env, st, k)
    if isinstance(c, App):
        a = fresh_int(st)
        return LKState(c.fn, env, st.update(a, (D(c.arg, env),)), KC2(a, k))
    if isinstance(c, Lam):
        if isinstance(k, KC1):
            return LKState(c, env, st.update(k.target, (C(c, env),)), k.next)
        if isinstance(k, KC2):
            return LKState(c.body, env.extend(c.var, k.arg), st, k.next)
    return None


def lk_final(s: LKState) -> bool:
    return isinstance(s.control, Lam) and isinstance(s.kont, KMt0)


def lk_run(e: Expr, fuel: int) -> Trace:
    return run(lk_inject(e), lk_step, lk_final, fuel)


# -- lock-step --------------------------------------------------------------------


class _Bijection:
    """Pairs LK integer cells with LK* addresses allocated at the same step and
    checks that everything the two machines touch agrees up to that renaming.

    Continuation cells of LK* are never overwritten, so a continuation pair
    verified once stays verified; thunk cells are re-checked whenever either
    machine writes them.
    """

    def __init__(self):
        self.fwd: dict = {}
        self.back: dict = {}
        self.konts: set = set()
        self.keep: list = []  # pins KC objects so their ids stay unique

    def env(self, e1: Env, e2: Env) -> bool:
        if len(e1) != len(e2):
            return False
        return all(self.fwd.get(a) == e2.get(x) for x, a in e1.items())

    def storable(self, x1, x2) -> bool:
        if type(x1) is not type(x2):
            return False
        body1 = x1.expr if isinstance(x1, D) else x1.value
        body2 = x2.expr if isinstance(x2, D) else x2.value
        return body1 == body2 and self.env(x1.env, x2.env)

    def kont(self, k1, a2, store2: Store) -> bool:
        while True:
            key = (id(k1), a2)
            if key in self.konts:
                return True
            k2 = store2.only(a2)
            if isinstance(k1, KMt0) or isinstance(k2, Mt):
                ok = isinstance(k1, KMt0) and isinstance(k2, Mt)
            elif isinstance(k1, KC1) and isinstance(k2, C1):
                ok = self.fwd.get(k1.target) == k2.target
            elif isinstance(k1, KC2) and isinstance(k2, C2):
                ok = self.fwd.get(k1.arg) == k2.arg
            else:
                ok = False
            if not ok:
                return False
            self.konts.add(key)
            self.keep.append(k1)
            if isinstance(k1, KMt0):
                return True
            k1, a2 = k1.next, k2.next

    def advance(self, old1: Store, new1: Store, old2: Store, new2: Store) -> bool:
        """Pair fresh cells and compare every cell either machine wrote."""
        d1 = [] if new1 is old1 else list(new1.delta)
        d2 = [] if new2 is old2 else [a for a in new2.delta if any(isinstance(v, (D, C)) for v in new2.get(a))]
        fresh1 = [a for a in d1 if a not in self.fwd]
        fresh2 = [a for a in d2 if a not in self.back]
        if len(fresh1) != len(fresh2):
            return False
        for a1, a2 in zip(fresh1, fresh2):
            self.fwd[a1], self.back[a2] = a2, a1
        if {self.fwd[a] for a in d1} != set(d2):
            return False
        return all(self.storable(new1.only(a), new2.only(self.fwd[a])) for a in d1)


def lockstep_check(e: Expr, fuel: int = 1000) -> tuple[bool, int, str]:
    """Run LK and concrete LK* together; returns (agreed, steps, status).

    States are compared up to a renaming of store cells that is built as the
    machines allocate; this implies agreement after dereferencing the stores.
    """
    p = KCFA.exact()
    s1, s2 = lk_inject(e), inject(e, p)
    bij = _Bijection()
    steps = 0
    while True:
        if s1.control != s2.control or not bij.env(s1.env, s2.env) or not bij.kont(s1.kont, s2.kont, s2.store):
            return False, steps, "diverged"
        if steps >= fuel:
            return True, steps, "fuel-exhausted"
        n1 = lk_step(s1)
        n2 = step(s2, p)
        if n1 is None or not n2:
            if (n1 is None) != (not n2):
                return False, steps, "diverged"
            return True, steps, "final" if lk_final(s1) else "stuck"
        n2 = n2[0]
        if not bij.advance(s1.store, n1.store, s2.store, n2.store):
            return False, steps + 1, "diverged"
        s1, s2 = n1, n2
        steps += 1
