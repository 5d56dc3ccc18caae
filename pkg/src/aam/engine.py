"""Generic reachability machinery shared by every abstract machine:
worklist exploration, the abstraction map, stepwise simulation checks and the
global-store widening."""

from __future__ import annotations

import random
from collections import Counter, deque
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterable

from .core import KCFA, Addr, Env, Store, Time
from .syntax import Expr


@dataclass
class Graph:
    """Reachable abstract states (index 0 is the initial state) and transitions."""

    states: list
    edges: list
    succs: dict

    @property
    def terminals(self) -> list:
        return [i for i in range(len(self.states)) if not self.succs.get(i)]

    def __len__(self) -> int:
        return len(self.states)


class StateLimitExceeded(RuntimeError):
    """``explore`` found more states than its ``limit``."""


def explore(init, step: Callable[[object], Iterable], limit: int | None = None) -> Graph:
    """Transitive closure of ``step`` from ``init`` (FIFO worklist, exact seen-set)."""
    index = {init: 0}
    states = [init]
    succs: dict[int, list[int]] = {}
    edges = []
    work = deque([0])
    while work:
        i = work.popleft()
        out = []
        for nxt in step(states[i]):
            j = index.get(nxt)
            if j is None:
                j = index[nxt] = len(states)
                states.append(nxt)
                work.append(j)
                if limit is not None and len(states) > limit:
                    raise StateLimitExceeded(f"state space exceeded {limit} states")
            if j not in out:
                out.append(j)
                edges.append((i, j))
        succs[i] = out
    return Graph(states, edges, succs)


# -- abstraction ----------------------------------------------------------------


def state_fields(s) -> tuple:
    return tuple(f.name for f in fields(s))


def flat_part(s) -> tuple:
    """Every component except the store, in declaration order."""
    return tuple(getattr(s, n) for n in state_fields(s) if n != "store")


class Abstraction:
    """The structural abstraction map for one k-CFA policy.

    Addresses and times are truncated to ``k`` and lose their serial; every
    other structure is mapped component-wise; stores are grouped by abstract
    address and joined.
    """

    def __init__(self, params: KCFA):
        self.p = params
        self.memo: dict = {}

    def __call__(self, x):
        if x is None or isinstance(x, (str, int, Expr, frozenset)):
            return x
        if isinstance(x, Addr):
            return self.p.alpha_addr(x)
        if isinstance(x, Time):
            return self.p.alpha_time(x)
        hit = self.memo.get(id(x))
        if hit is not None and hit[0] is x:
            return hit[1]
        if isinstance(x, Env):
            val = x.map_values(self)
        elif isinstance(x, Store):
            val = self.store(x)
        elif hasattr(x, "_key"):
            val = type(x)(*(self(f) for f in x._key))
        elif isinstance(x, tuple):
            val = tuple(self(f) for f in x)
        else:
            raise TypeError(f"cannot abstract {x!r}")
        self.memo[id(x)] = (x, val)
        return val

    def store(self, st: Store) -> Store:
        grouped: dict = {}
        for a, vals in st.items():
            grouped.setdefault(self(a), set()).update(self(v) for v in vals)
        return Store(grouped)


def leq(s1, s2) -> bool:
    """Component-wise order: flat on everything but the store, subset on store entries."""
    if type(s1) is not type(s2):
        return False
    return flat_part(s1) == flat_part(s2) and s1.store.leq(s2.store)


class IncrementalStoreAlpha:
    """Maintains α(σ) along a concrete trace using each store's ``delta``."""

    def __init__(self, alpha: Abstraction):
        self.alpha = alpha
        self.prev: Store | None = None
        self.counts: Counter = Counter()
        self.entries: dict = {}

    def _add(self, a, vals, sign: int):
        aa = self.alpha(a)
        for v in vals:
            key = (aa, self.alpha(v))
            self.counts[key] += sign
            if self.counts[key] == 0:
                del self.counts[key]
                self.entries[aa].discard(key[1])
                if not self.entries[aa]:
                    del self.entries[aa]
            elif sign > 0 and self.counts[key] == 1:
                self.entries.setdefault(aa, set()).add(key[1])

    def update(self, st: Store) -> dict:
        prev = self.prev
        if prev is None or (st is not prev and not st.delta):
            self.counts.clear()
            self.entries.clear()
            for a, vals in st.items():
                self._add(a, vals, +1)
        elif st is not prev:
            for a in st.delta:
                self._add(a, prev.get(a), -1)
                self._add(a, st.get(a), +1)
        self.prev = st
        return self.entries


@dataclass
class SoundnessReport:
    checked: int
    violation: int | None = None  # first trace index with no simulating abstract state
    covered_anywhere: bool = True
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.violation is None

    def __str__(self):
        if self.ok:
            return f"all {self.checked} concrete states simulated stepwise"
        return f"concrete state {self.violation} not simulated ({self.detail})"


def simulate(trace: list, graph: Graph, params: KCFA) -> SoundnessReport:
    """Check that ``graph`` simulates the concrete ``trace`` step by step.

    Keeps the set of abstract states that cover trace state i along some
    abstract path; the next set is drawn from their successors only.
    """
    alpha = Abstraction(params)
    stores = IncrementalStoreAlpha(alpha)

    def covers(s, j) -> bool:
        hat = graph.states[j]
        if type(hat) is not type(s):
            return False
        if tuple(alpha(x) for x in flat_part(s)) != flat_part(hat):
            return False
        entries = stores.entries
        get = hat.store.get
        return all(vals <= get(a) for a, vals in entries.items())

    if not trace:
        return SoundnessReport(0)
    stores.update(trace[0].store)
    current = {j for j in range(len(graph.states)) if covers(trace[0], j)}
    if not current:
        return SoundnessReport(1, 0, False, "initial state not covered")
    for i in range(1, len(trace)):
        s = trace[i]
        stores.update(s.store)
        nxt = {j for c in current for j in graph.succs.get(c, ()) if covers(s, j)}
        if not nxt:
            anywhere = any(covers(s, j) for j in range(len(graph.states)))
            return SoundnessReport(i + 1, i, anywhere, f"at {s}")
        current = nxt
    return SoundnessReport(len(trace))


# -- widening with a single global store --------------------------------------


@dataclass
class System:
    """Store-less partial states plus one global abstract store."""

    states: set
    store: Store
    iterations: int = 0
    edges: set = field(default_factory=set)
    init: object = None

    def full_states(self) -> list:
        return [replace(c, store=self.store) for c in self.states]


def analyze_widened(init, step: Callable, shuffle_seed: int | None = None, check_monotone: bool = True) -> System:
    """Least fixed point of the global-store transfer function.

    Starting from the empty system, each application steps every partial state
    against the current global store, adds the successors' partial states and
    the injected state, and joins every successor store (and the injected store)
    into the global one. ``iterations`` counts applications up to and including
    the one that confirms the fixed point.
    """
    c0 = replace(init, store=None)
    sigma0 = init.store
    states: set = set()
    store = Store.empty()
    edges: set = set()
    rng = random.Random(shuffle_seed) if shuffle_seed is not None else None
    iterations = 0
    while True:
        iterations += 1
        new_states = set(states)
        new_states.add(c0)
        new_store = store.join_store(sigma0)
        order = list(states)
        if rng is not None:
            rng.shuffle(order)
        for c in order:
            for nxt in step(replace(c, store=store)):
                partial = replace(nxt, store=None)
                new_states.add(partial)
                edges.add((c, partial))
                new_store = new_store.join_store(nxt.store)
        if check_monotone and not (states <= new_states and store.leq(new_store)):
            raise AssertionError("transfer function is not monotone")
        if new_states == states and new_store == store:
            return System(states, store, iterations, edges, c0)
        states, store = new_states, new_store
