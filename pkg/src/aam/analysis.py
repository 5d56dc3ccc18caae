"""Family registry, flow facts, terminal classification and the widened
analysis entry points used by the CLI and the tests."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from . import abstract, control, lazy, security
from .concrete import Fn, KAddr, Mt
from .core import KCFA, Addr
from .engine import Graph, System, analyze_widened
from .syntax import App, Callcc, Catch, Expr, Lam, Program, Ref, Throw, Value

# -- families ---------------------------------------------------------------------


@dataclass
class Family:
    """One abstract machine family: injection, step, and concrete tracer."""

    name: str
    inject: Callable  # (e, p) -> state
    step: Callable  # (state, p) -> list of states
    trace: Callable  # (e, fuel) -> Trace

    def aval(self, e: Expr, p: KCFA, gc: bool = False) -> Graph:
        from .engine import explore
        from .gc import collect

        init = self.inject(e, p)
        if gc:
            return explore(collect(init), lambda s: [collect(n) for n in self.step(s, p)])
        return explore(init, lambda s: self.step(s, p))

    def widened(self, e: Expr, p: KCFA, **kw) -> System:
        return analyze_widened(self.inject(e, p), lambda s: self.step(s, p), **kw)


class CMFamily(Family):
    """CM* needs the permission universe, which depends on the program."""

    def __init__(self, extra=None):
        self.extra = tuple(extra or ())
        self.universe = frozenset(self.extra)
        super().__init__("cm", self._inject, self._step, self._trace)

    def _inject(self, e, p):
        self.universe = security.universe_of(e, self.extra)
        return security.inject(e, p)

    def _step(self, s, p):
        return security.step(s, p, self.universe)

    def _trace(self, e, fuel):
        return security.star_trace(e, fuel, security.universe_of(e, self.extra))


def family(name: str, variant: str = "baseline", universe=None) -> Family:
    """Look up a family; ``cek``..``cesk-star-t`` all analyze with abstract CESK*."""
    if name in ("cek", "cesk", "cesk-star", "cesk-star-t", "cesk-star-abstract"):
        return Family("cesk-star", abstract.inject, abstract.step, abstract.concrete_trace)
    if name == "extended":
        return Family("extended", control.ext_inject, control.ext_step, control.ext_trace)
    if name == "ceshk":
        return Family("ceshk", control.ceshk_inject, control.ceshk_step, control.ceshk_trace)
    if name in ("lk", "lk-star"):
        return Family(
            f"lk-star/{variant}",
            lazy.inject,
            lambda s, p: lazy.step(s, p, variant),
            lambda e, fuel: lazy.star_trace(e, fuel, variant),
        )
    if name == "cm":
        return CMFamily(universe)
    raise KeyError(f"unknown machine family {name!r}")


# -- flow facts -------------------------------------------------------------------


def _app_of(prog: Program, kont_addr) -> int | None:
    """Application label for a frame allocated at the operand/operator of that app."""
    if isinstance(kont_addr, Addr) and kont_addr.site[0] == "k":
        return prog.parent.get(kont_addr.label)
    return None


def flow_facts(states, prog: Program) -> frozenset:
    """``(app label, operator label)`` pairs observed at procedure dispatch.

    Operator labels are λ or ``callcc`` labels, or ``("k", l)`` for a
    continuation captured by the ``callcc`` labelled ``l``.
    """
    out = set()
    for s in states:
        c = s.control
        if isinstance(c, (Value, KAddr)):
            for k in s.store.get(s.kont):
                if isinstance(k, Fn):
                    app = _app_of(prog, s.kont)
                    f = k.fn
                    op = ("k", f.origin) if isinstance(f, KAddr) else f.label
                    out.add((app, op))
                elif isinstance(k, (lazy.C2, lazy.C2Post)) and isinstance(c, Lam):
                    out.add((_app_of(prog, s.kont), c.label))
    return frozenset(out)


def flow_table(facts) -> dict:
    table: dict = {}
    for app, op in facts:
        table.setdefault(app, set()).add(op)
    return {k: sorted(v, key=str) for k, v in sorted(table.items(), key=lambda kv: str(kv[0]))}


def handler_facts(states, prog: Program) -> dict:
    """Per ``throw`` label, the ``catch`` labels whose handler may receive it."""
    out: dict = {}
    for s in states:
        c = s.control
        if isinstance(c, Throw) and isinstance(s, control.HState):
            got = out.setdefault(c.label, set())
            for eta in s.store.get(s.handler):
                if isinstance(eta, control.Hn):
                    got.add(prog.parent[eta.handler.label])
    return {k: sorted(v) for k, v in sorted(out.items())}


def escape_facts(states, prog: Program) -> dict:
    """Per ``callcc`` label, the application labels where its continuation is invoked."""
    out: dict = {}
    for s in states:
        if isinstance(s.control, (Value, KAddr)):
            for k in s.store.get(s.kont):
                if isinstance(k, Fn) and isinstance(k.fn, KAddr):
                    out.setdefault(k.fn.origin, set()).add(_app_of(prog, s.kont))
    return {k: sorted(v, key=str) for k, v in sorted(out.items())}


# -- terminals --------------------------------------------------------------------


def classify_terminal(s, has_successor: bool) -> set:
    kinds = control.classify(s)
    if not has_successor and not kinds:
        kinds = {"stuck"}
    return kinds


def terminal_summary(graph: Graph) -> dict:
    """Counts of terminal kinds over the reachable states."""
    out: dict = {}
    for i, s in enumerate(graph.states):
        for kind in classify_terminal(s, bool(graph.succs.get(i))):
            out[kind] = out.get(kind, 0) + 1
    return out


def widened_graph(sys: System) -> Graph:
    """View a widened system as a graph over full states (global store)."""
    partials = sorted(sys.states, key=lambda c: (c != sys.init, str(c)))
    index = {c: i for i, c in enumerate(partials)}
    states = [replace(c, store=sys.store) for c in partials]
    succs: dict = {i: [] for i in range(len(states))}
    edges = []
    for a, b in sys.edges:
        i, j = index[a], index[b]
        if j not in succs[i]:
            succs[i].append(j)
            edges.append((i, j))
    return Graph(states, edges, succs)


# -- widening bound -----------------------------------------------------------------


def monovariant_bound(e: Expr) -> int:
    """|Exp|·|Lab|² + 1 + |Var+Lab|·(2·|Exp×Lab| + |Lam|) from syntactic counts."""
    prog = Program.of(e)
    n_exp = len(prog.nodes)
    n_lab = n_exp
    n_var = len(prog.variables())
    n_lam = prog.count(Lam)
    return n_exp * n_lab**2 + 1 + (n_var + n_lab) * (2 * n_exp * n_lab + n_lam)


@dataclass
class BoundReport:
    iterations: int
    bound: int

    @property
    def ok(self) -> bool:
        return self.iterations <= self.bound


def monovariant_bound_check(e: Expr) -> BoundReport:
    sys = family("cesk-star").widened(e, KCFA.abstract(0))
    return BoundReport(sys.iterations, monovariant_bound(e))
