"""Concrete CEK, CESK, CESK* and time-stamped CESK* machines.

The pointer-refined storables defined here (closures, ``mt``/``ar``/``fn``
frames, reified continuation addresses) are shared with the abstract machines.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable

from .core import EMPTY_ENV, Addr, Env, FreshnessError, Store, Time, record
from .syntax import App, Callcc, Expr, FalseLit, Lam, Ref, Value, free_vars

DEFAULT_FUEL = 10_000
NO_MARKS: frozenset = frozenset()


def default_fuel() -> int:
    return int(os.environ.get("AAM_FUEL", DEFAULT_FUEL))


class OpenTermError(ValueError):
    pass


# -- storables and frames ---------------------------------------------------


@record
class KAddr:
    """A continuation reified by ``callcc``; ``origin`` is the callcc label."""

    addr: Hashable
    origin: int = -1


@record
class Clo:
    value: Any  # Value expression or KAddr
    env: Env

    def refs(self) -> set:
        return value_refs(self.value, self.env)

    def konts(self) -> tuple:
        return ()


class Kont:
    marks: frozenset

    def refs(self) -> set:
        return set()

    def konts(self) -> tuple:
        return ()


@record
class Mt(Kont):
    marks: frozenset = NO_MARKS


@record
class Ar(Kont):
    expr: Expr
    env: Env
    next: Hashable
    marks: frozenset = NO_MARKS

    def refs(self) -> set:
        return {self.next} | env_refs(self.env, free_vars(self.expr))

    def konts(self) -> tuple:
        return (self.next,)


@record
class Fn(Kont):
    fn: Any
    env: Env
    next: Hashable
    marks: frozenset = NO_MARKS

    def refs(self) -> set:
        return {self.next} | value_refs(self.fn, self.env)

    def konts(self) -> tuple:
        return (self.next,)


MT = Mt()


def env_refs(env: Env, names) -> set:
    """Addresses bound in ``env`` for the given variable names."""
    return {env[x] for x in names if x in env}


def value_refs(v, env: Env) -> set:
    if isinstance(v, KAddr):
        return {v.addr}
    return env_refs(env, free_vars(v))


def is_value(c) -> bool:
    return isinstance(c, (Value, KAddr))


def check_closed(e: Expr) -> None:
    fv = free_vars(e)
    if fv:
        raise OpenTermError(f"open term: free variables {sorted(fv)}")


def fresh_int(store: Store) -> int:
    """A natural number not in the store's domain: the first one from |σ| upward."""
    n = len(store)
    while n in store:
        n += 1
    return n


# -- rendering --------------------------------------------------------------


def show(c) -> str:
    if isinstance(c, KAddr):
        return f"k<{c.addr}>"
    if isinstance(c, Ref):
        return f"{c.name}^{c.label}"
    if isinstance(c, Lam):
        return f"λ{c.var}^{c.label}"
    if isinstance(c, App):
        return f"app^{c.label}"
    if isinstance(c, FalseLit):
        return f"#f^{c.label}"
    if isinstance(c, Callcc):
        return f"callcc^{c.label}"
    return f"{type(c).__name__.lower()}^{c.label}"


def show_env(env: Env) -> str:
    return "{" + ",".join(f"{x}:{_show_binding(v)}" for x, v in sorted(env.items())) + "}"


def _show_binding(v) -> str:
    if isinstance(v, Clo):
        return show(v.value)
    return str(v)


# -- CEK ----------------------------------------------------------------------


@record
class KMt:
    pass


@record
class KAr:
    expr: Expr
    env: Env
    next: Any


@record
class KFn:
    fn: Any
    env: Env
    next: Any


@record
class CEKState:
    control: Any
    env: Env
    kont: Any

    def __str__(self):
        return f"<{show(self.control)}, {show_env(self.env)}, {_show_rkont(self.kont)}>"


def _show_rkont(k) -> str:
    parts = []
    while not isinstance(k, KMt):
        parts.append(("ar:" + show(k.expr)) if isinstance(k, KAr) else ("fn:" + show(k.fn)))
        k = k.next
    return "[" + " ".join(parts + ["mt"]) + "]"


def cek_inject(e: Expr) -> CEKState:
    check_closed(e)
    return CEKState(e, EMPTY_ENV, KMt())


def cek_step(s: CEKState) -> CEKState | None:
    c, env, k = s.control, s.env, s.kont
    if isinstance(c, Ref):
        clo = env.get(c.name)
        if clo is None:
            return None
        return CEKState(clo.value, clo.env, k)
    if isinstance(c, App):
        return CEKState(c.fn, env, KAr(c.arg, env, k))
    if is_value(c):
        if isinstance(k, KAr):
            return CEKState(k.expr, k.env, KFn(c, env, k.next))
        if isinstance(k, KFn) and isinstance(k.fn, Lam):
            lam = k.fn
            return CEKState(lam.body, k.env.extend(lam.var, Clo(c, env)), k.next)
    return None


def cek_final(s: CEKState) -> bool:
    return is_value(s.control) and isinstance(s.kont, KMt)


# -- CESK -------------------------------------------------------------------


@record
class CESKState:
    control: Any
    env: Env
    store: Store
    kont: Any

    def __str__(self):
        return f"<{show(self.control)}, {show_env(self.env)}, |σ|={len(self.store)}, {_show_rkont(self.kont)}>"


def cesk_inject(e: Expr) -> CESKState:
    check_closed(e)
    return CESKState(e, EMPTY_ENV, Store.empty(), KMt())


def cesk_step(s: CESKState) -> CESKState | None:
    c, env, store, k = s.control, s.env, s.store, s.kont
    if isinstance(c, Ref):
        if c.name not in env:
            return None
        clo = store.only(env[c.name])
        return CESKState(clo.value, clo.env, store, k)
    if isinstance(c, App):
        return CESKState(c.fn, env, store, KAr(c.arg, env, k))
    if is_value(c):
        if isinstance(k, KAr):
            return CESKState(k.expr, k.env, store, KFn(c, env, k.next))
        if isinstance(k, KFn) and isinstance(k.fn, Lam):
            lam = k.fn
            a = fresh_int(store)
            return CESKState(lam.body, k.env.extend(lam.var, a), store.update(a, (Clo(c, env),)), k.next)
    return None


def cesk_final(s: CESKState) -> bool:
    return is_value(s.control) and isinstance(s.kont, KMt)


# -- CESK* --------------------------------------------------------------------


@record
class State:
    """⟨control, env, store, continuation address, time⟩.

    Shared by the pointer-refined CESK*-style machines (base, extended, lazy,
    continuation-marks), concrete or abstract; ``time`` is ``None`` for the
    untimed CESK* machine.
    """

    control: Any
    env: Env
    store: Store
    kont: Hashable
    time: Any = None

    def __str__(self):
        t = "" if self.time is None else f", {self.time}"
        st = "" if self.store is None else f"|σ|={len(self.store)}, "
        return f"<{show(self.control)}, {show_env(self.env)}, {st}{self.kont}{t}>"


def cesk_star_inject(e: Expr) -> State:
    check_closed(e)
    return State(e, EMPTY_ENV, Store.of((0, MT)), 0)


def cesk_star_step(s: State) -> State | None:
    c, env, store, a = s.control, s.env, s.store, s.kont
    if isinstance(c, Ref):
        if c.name not in env:
            return None
        clo = store.only(env[c.name])
        return State(clo.value, clo.env, store, a)
    if isinstance(c, App):
        b = fresh_int(store)
        return State(c.fn, env, store.update(b, (Ar(c.arg, env, a),)), b)
    if is_value(c):
        k = store.only(a)
        if isinstance(k, Ar):
            b = fresh_int(store)
            return State(k.expr, k.env, store.update(b, (Fn(c, env, k.next),)), b)
        if isinstance(k, Fn) and isinstance(k.fn, Lam):
            lam = k.fn
            b = fresh_int(store)
            return State(lam.body, k.env.extend(lam.var, b), store.update(b, (Clo(c, env),)), k.next)
    return None


def star_final(s: State) -> bool:
    return is_value(s.control) and isinstance(s.store.only(s.kont), Mt)


# -- time-stamped CESK* -------------------------------------------------------


class IntPolicy:
    """Integer times and addresses.

    ``alloc="fresh"`` allocates the least unused natural; ``alloc="time"`` is
    the literal ``alloc(ς) = t`` reading, which collides with ``a0 = t0 = 0``
    on the first allocation and so trips the freshness check.
    """

    t0 = 0
    a0 = 0

    def __init__(self, alloc: str = "fresh"):
        if alloc not in ("fresh", "time"):
            raise ValueError(alloc)
        self.mode = alloc

    def tick(self, s: State) -> int:
        return s.time + 1

    def alloc(self, s: State) -> int:
        return s.time if self.mode == "time" else fresh_int(s.store)


def cesk_star_t_inject(e: Expr, policy=None) -> State:
    policy = policy or IntPolicy()
    check_closed(e)
    return State(e, EMPTY_ENV, Store.of((policy.a0, MT)), policy.a0, policy.t0)


def cesk_star_t_step(s: State, policy=None) -> State | None:
    policy = policy or IntPolicy()
    c, env, store, a = s.control, s.env, s.store, s.kont

    def alloc() -> Hashable:
        b = policy.alloc(s)
        if b in store:
            raise FreshnessError(f"alloc returned {b}, already in dom(σ)")
        return b

    if isinstance(c, Ref):
        if c.name not in env:
            return None
        clo = store.only(env[c.name])
        return State(clo.value, clo.env, store, a, policy.tick(s))
    if isinstance(c, App):
        b = alloc()
        return State(c.fn, env, store.update(b, (Ar(c.arg, env, a),)), b, policy.tick(s))
    if is_value(c):
        k = store.only(a)
        if isinstance(k, Ar):
            b = alloc()
            return State(k.expr, k.env, store.update(b, (Fn(c, env, k.next),)), b, policy.tick(s))
        if isinstance(k, Fn) and isinstance(k.fn, Lam):
            lam = k.fn
            b = alloc()
            u = policy.tick(s)
            return State(lam.body, k.env.extend(lam.var, b), store.update(b, (Clo(c, env),)), k.next, u)
    return None


# -- evaluation -----------------------------------------------------------------


@dataclass
class Machine:
    inject: Callable
    step: Callable
    final: Callable


MACHINES = {
    "cek": Machine(cek_inject, cek_step, cek_final),
    "cesk": Machine(cesk_inject, cesk_step, cesk_final),
    "cesk-star": Machine(cesk_star_inject, cesk_star_step, star_final),
    "cesk-star-t": Machine(cesk_star_t_inject, cesk_star_t_step, star_final),
}


@dataclass
class Trace:
    states: list
    status: str  # final | stuck | fuel-exhausted

    @property
    def last(self):
        return self.states[-1]


def run(inject_state, step: Callable, final: Callable, fuel: int) -> Trace:
    s = inject_state
    states = [s]
    for _ in range(fuel):
        nxt = step(s)
        if nxt is None:
            return Trace(states, "final" if final(s) else "stuck")
        s = nxt
        states.append(s)
    return Trace(states, "final" if final(s) else "fuel-exhausted")


def eval_reachable(e: Expr, machine: str = "cek", fuel: int | None = None) -> Trace:
    """Trace of states from ``inject(e)``; ``fuel`` bounds the number of steps."""
    m = MACHINES[machine]
    return run(m.inject(e), m.step, m.final, default_fuel() if fuel is None else fuel)


# -- lock-step comparison -------------------------------------------------------


class Interner:
    """Hash-consing table: structurally equal erased objects get equal ids."""

    def __init__(self):
        self.table: dict = {}

    def __call__(self, key) -> int:
        n = self.table.get(key)
        if n is None:
            n = self.table[key] = len(self.table)
        return n


class Eraser:
    """Erases stores and addresses, yielding ids comparable across machines.

    Results are memoized per object identity; this is sound as long as the
    objects' meaning does not change, which holds for machines without
    assignment (bindings and frames are never overwritten).
    """

    def __init__(self, intern: Interner, deref=None):
        self.intern = intern
        self.deref = deref  # addr -> storable, for store-based machines
        self.memo: dict = {}

    def _memo(self, obj, fn):
        hit = self.memo.get(id(obj))
        if hit is not None and hit[0] is obj:
            return hit[1]
        val = fn(obj)
        self.memo[id(obj)] = (obj, val)
        return val

    def binding(self, b) -> int:
        if self.deref is not None and not isinstance(b, Clo):
            b = self.deref(b)
        return self._memo(b, lambda clo: self.intern(("clo", self.value(clo.value), self.env(clo.env))))

    def value(self, v):
        if isinstance(v, KAddr):
            return ("kaddr", self.kont(v.addr))
        return v

    def env(self, env: Env) -> int:
        return self._memo(
            env, lambda e: self.intern(("env",) + tuple(sorted((x, self.binding(b)) for x, b in e.items())))
        )

    def kont(self, k) -> int:
        if self.deref is not None and not isinstance(k, (KMt, KAr, KFn, Kont)):
            k = self.deref(k)
        return self._memo(k, self._kont)

    def _kont(self, k) -> int:
        if isinstance(k, (KMt, Mt)):
            return self.intern(("mt",))
        if isinstance(k, (KAr, Ar)):
            return self.intern(("ar", k.expr, self.env(k.env), self.kont(k.next)))
        if isinstance(k, (KFn, Fn)):
            return self.intern(("fn", self.value(k.fn), self.env(k.env), self.kont(k.next)))
        raise TypeError(f"unknown continuation {k!r}")

    def state(self, s) -> tuple:
        return (self.value(s.control), self.env(s.env), self.kont(s.kont))


@dataclass
class LockstepReport:
    steps: int
    agreed: bool
    statuses: dict
    divergence: tuple | None = None  # (step index, machine, machine)
    rendered: dict = field(default_factory=dict)

    def __str__(self):
        if self.agreed:
            return f"lock-step agreement for {self.steps} steps ({self.statuses})"
        return f"divergence at step {self.divergence[0]} between {self.divergence[1]} and {self.divergence[2]}"


def lockstep_check(e: Expr, fuel: int = 1000) -> LockstepReport:
    """Run CEK, CESK, CESK* and CESK*t side by side, comparing erased states."""
    intern = Interner()
    states = {name: MACHINES[name].inject(e) for name in MACHINES}
    erasers = {
        "cek": Eraser(intern),
        "cesk": Eraser(intern, lambda a: states["cesk"].store.only(a)),
        "cesk-star": Eraser(intern, lambda a: states["cesk-star"].store.only(a)),
        "cesk-star-t": Eraser(intern, lambda a: states["cesk-star-t"].store.only(a)),
    }
    names = list(MACHINES)
    steps = 0
    while True:
        erased = {n: erasers[n].state(states[n]) for n in names}
        for n in names[1:]:
            if erased[n] != erased[names[0]]:
                return LockstepReport(
                    steps, False, {}, (steps, names[0], n), {m: str(states[m]) for m in names}
                )
        if steps >= fuel:
            return LockstepReport(steps, True, {n: "fuel-exhausted" for n in names})
        nxt = {n: MACHINES[n].step(states[n]) for n in names}
        done = [n for n in names if nxt[n] is None]
        if done:
            if len(done) != len(names):
                return LockstepReport(steps, False, {}, (steps, done[0], next(n for n in names if n not in done)))
            statuses = {n: "final" if MACHINES[n].final(states[n]) else "stuck" for n in names}
            return LockstepReport(steps, len(set(statuses.values())) == 1, statuses)
        states = nxt
        steps += 1
