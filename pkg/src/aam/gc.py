"""Abstract garbage collection: live locations, the tri-colour GC machine,
``collect`` and the determinized step-then-collect transition."""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Iterable

from .concrete import KAddr, Kont, env_refs
from .core import A_MT, Env, Store
from .syntax import Expr, free_vars


class DanglingAddressError(KeyError):
    """A reachable address has no store entry."""


def refs(x, env: Env | None = None) -> set:
    """Addresses mentioned directly by ``x`` (one step of reachability).

    ``x`` is a storable (anything with a ``refs`` method), a reified
    continuation, an expression closed by ``env``, or an environment.
    """
    if isinstance(x, KAddr):
        return {x.addr}
    if isinstance(x, Expr):
        return env_refs(env, free_vars(x)) if env is not None else set()
    if isinstance(x, Env):
        return set(x.values())
    return x.refs()


def state_roots(s) -> set:
    """Root set of a machine state: control/env, continuation, and handler if any."""
    out = refs(s.control, s.env)
    out.add(s.kont)
    h = getattr(s, "handler", None)
    if h is not None:
        out.add(h)
    return out


def live_locations(x, store: Store, env: Env | None = None) -> set:
    """Least set of addresses reachable from ``x`` through ``store``.

    Continuation pointers are followed to the fixed point and every reached
    storable contributes its own references.
    """
    seen: set = set()
    todo = list(refs(x, env))
    while todo:
        a = todo.pop()
        if a in seen:
            continue
        if a not in store:
            raise DanglingAddressError(a)
        seen.add(a)
        for v in store[a]:
            todo.extend(v.refs())
    return seen


def gc_reachable(roots: Iterable, store: Store, trace: list | None = None) -> set:
    """Run the grey/black collector machine to its final state.

    ``trace`` (if given) receives the ``(grey, black)`` pair after each step.
    """
    black: set = set()
    grey = set(roots)
    while grey:
        a = grey.pop()
        if a not in store:
            raise DanglingAddressError(a)
        black.add(a)
        for v in store[a]:
            grey.update(r for r in v.refs() if r not in black)
        if trace is not None:
            trace.append((frozenset(grey), frozenset(black)))
    return black


def collect(s):
    """``s`` with its store restricted to the addresses reachable from its roots."""
    live = gc_reachable(state_roots(s), s.store)
    return replace(s, store=s.store.restrict(live))


def step_gc(s, step: Callable) -> list:
    """Determinized transition: take one step, then collect."""
    return [collect(n) for n in step(s)]


def collect_anywhere(s, step: Callable) -> list:
    """Nondeterministic variant for verification: either step, or collect
    when collection removes something."""
    out = list(step(s))
    c = collect(s)
    if c != s:
        out.append(c)
    return out


def commutes(s, step: Callable) -> bool:
    """Does collecting before a step change the collected successors?"""
    before = [collect(n) for n in step(collect(s))]
    after = [collect(n) for n in step(s)]
    return set(before) == set(after) and len(before) == len(after)


def _is_frame(v) -> bool:
    return isinstance(v, (Kont, KAddr)) or bool(getattr(v, "konts", tuple)())


def is_stack_like(s, bottom=A_MT) -> bool:
    """Live continuation cells form one chain of single frames from the
    register down to ``bottom``."""
    chain = []
    a = s.kont
    while True:
        if a in chain:
            return False
        chain.append(a)
        frames = s.store.get(a)
        if len(frames) != 1:
            return False
        (k,) = frames
        nxt = k.konts()
        if not nxt:
            break
        a = nxt[0]
    if chain[-1] != bottom:
        return False
    live = gc_reachable(state_roots(s), s.store)
    frames = {b for b in live if any(_is_frame(v) for v in s.store.get(b))}
    return frames == set(chain)
