"""Value layer shared by every machine: hashed records, environments,
set-valued stores, addresses, times and the k-CFA allocation policy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable, Iterable, Iterator, NamedTuple


def record(cls):
    """Frozen dataclass with a cached structural hash.

    Machine states are hashed constantly during exploration; the hash is
    computed on first use and then kept, so it is paid at most once per object.
    """
    names = tuple(cls.__dict__.get("__annotations__", {}))

    def __post_init__(self):
        object.__setattr__(self, "_key", tuple(getattr(self, n) for n in names))
        object.__setattr__(self, "_hash", None)

    def __eq__(self, other):
        if self is other:
            return True
        return other.__class__ is self.__class__ and hash(self) == hash(other) and self._key == other._key

    def __hash__(self):
        h = self._hash
        if h is None:
            h = hash((cls.__name__, self._key))
            object.__setattr__(self, "_hash", h)
        return h

    cls.__post_init__ = __post_init__
    cls.__eq__ = __eq__
    cls.__hash__ = __hash__
    return dataclass(frozen=True, eq=False)(cls)


class Env:
    """Immutable finite map from variable names to bindings."""

    __slots__ = ("_map", "_hash")

    def __init__(self, mapping: Any = ()):
        self._map = dict(mapping)
        self._hash = None

    @classmethod
    def _wrap(cls, m: dict) -> Env:
        env = cls.__new__(cls)
        env._map = m
        env._hash = None
        return env

    def __getitem__(self, name: str):
        return self._map[name]

    def get(self, name: str, default=None):
        return self._map.get(name, default)

    def __contains__(self, name: object) -> bool:
        return name in self._map

    def __iter__(self) -> Iterator[str]:
        return iter(self._map)

    def __len__(self) -> int:
        return len(self._map)

    def items(self):
        return self._map.items()

    def values(self):
        return self._map.values()

    def extend(self, name: str, binding) -> Env:
        m = dict(self._map)
        m[name] = binding
        return Env._wrap(m)

    def restrict(self, names: Iterable[str]) -> Env:
        return Env._wrap({x: self._map[x] for x in names if x in self._map})

    def map_values(self, fn) -> Env:
        return Env._wrap({x: fn(v) for x, v in self._map.items()})

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._map.items()))
        return self._hash

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, Env):
            return NotImplemented
        return hash(self) == hash(other) and self._map == other._map

    def __repr__(self) -> str:
        inner = ", ".join(f"{x}: {v}" for x, v in sorted(self._map.items(), key=lambda kv: kv[0]))
        return "{" + inner + "}"


EMPTY_ENV = Env()
_NOTHING: frozenset = frozenset()


class Store:
    """Finite map from addresses to *sets* of storables.

    Concrete machines keep every entry a singleton and overwrite with
    :meth:`update`; abstract machines only ever :meth:`join`. ``delta`` lists
    the addresses touched by the operation that produced this store, which
    lets incremental consumers avoid rescanning the whole map.
    """

    __slots__ = ("_map", "_hash", "delta")

    def __init__(self, mapping: Any = (), delta: tuple = ()):
        self._map = {a: frozenset(vs) for a, vs in dict(mapping).items()}
        self._hash = None
        self.delta = delta

    @classmethod
    def _wrap(cls, m: dict, delta: tuple) -> Store:
        st = cls.__new__(cls)
        st._map = m
        st._hash = None
        st.delta = delta
        return st

    @classmethod
    def of(cls, *pairs) -> Store:
        """Store holding each ``(addr, storable)`` pair as a singleton entry."""
        return cls.empty().join(*pairs)

    @classmethod
    def empty(cls) -> Store:
        return cls._wrap({}, ())

    def __getitem__(self, addr) -> frozenset:
        return self._map[addr]

    def get(self, addr) -> frozenset:
        return self._map.get(addr, _NOTHING)

    def __contains__(self, addr: object) -> bool:
        return addr in self._map

    def __iter__(self):
        return iter(self._map)

    def __len__(self) -> int:
        return len(self._map)

    def items(self):
        return self._map.items()

    def keys(self):
        return self._map.keys()

    def only(self, addr):
        """The unique storable at ``addr`` (concrete stores)."""
        (v,) = self._map[addr]
        return v

    def join(self, *pairs) -> Store:
        m = None
        touched = []
        for addr, val in pairs:
            cur = (m or self._map).get(addr, _NOTHING)
            if val in cur:
                continue
            if m is None:
                m = dict(self._map)
            m[addr] = cur | {val}
            touched.append(addr)
        if m is None:
            return self
        return Store._wrap(m, tuple(touched))

    def update(self, addr, values: Iterable) -> Store:
        """Strong update: replace the entry at ``addr``."""
        m = dict(self._map)
        m[addr] = frozenset(values)
        return Store._wrap(m, (addr,))

    def join_store(self, other: Store) -> Store:
        m = None
        touched = []
        for addr, vals in other._map.items():
            cur = self._map.get(addr, _NOTHING)
            if vals <= cur:
                continue
            if m is None:
                m = dict(self._map)
            m[addr] = cur | vals
            touched.append(addr)
        if m is None:
            return self
        return Store._wrap(m, tuple(touched))

    def restrict(self, addrs: Iterable) -> Store:
        keep = {a: self._map[a] for a in addrs if a in self._map}
        if len(keep) == len(self._map):
            return self
        return Store._wrap(keep, ())

    def leq(self, other: Store) -> bool:
        return all(vals <= other.get(a) for a, vals in self._map.items())

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._map.items()))
        return self._hash

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, Store):
            return NotImplemented
        return hash(self) == hash(other) and self._map == other._map

    def __repr__(self) -> str:
        return f"Store({len(self._map)} entries)"


class Addr(NamedTuple):
    """Allocation site, contour, and (concretely) a serial step number.

    ``site`` is a small tuple: ``("v", var)`` for bindings, ``("k", label)`` for
    continuation frames, ``("d", label)`` for thunks, ``("h", label)`` for
    handlers, or a designated ``("mt",)`` / ``("fail",)``.
    """

    site: tuple
    ctx: tuple = ()
    n: int = 0

    def __str__(self) -> str:
        s = "".join(str(p) for p in self.site)
        if self.ctx:
            s += "@" + ".".join(str(l) for l in self.ctx)
        if self.n:
            s += f"#{self.n}"
        return s

    @property
    def label(self):
        return self.site[1] if len(self.site) > 1 else None


class Time(NamedTuple):
    label: Hashable = None
    ctx: tuple = ()
    n: int = 0

    def __str__(self) -> str:
        lab = "•" if self.label is None else str(self.label)
        ctx = ".".join(str(l) for l in self.ctx) or "ε"
        return f"({lab},{ctx})" + (f"#{self.n}" if self.n else "")


T0 = Time()
A_MT = Addr(("mt",))
A_FAIL = Addr(("fail",))


class FreshnessError(RuntimeError):
    """A concrete allocation returned an address already in the store."""


@dataclass(frozen=True)
class KCFA:
    """k-CFA tick/alloc policy.

    With ``concrete=True`` contours are never truncated and every time carries
    a step serial, so allocation is always fresh; ``alpha`` then drops the
    serial and truncates contours to ``k``. With ``concrete=False`` contours are
    truncated to ``k`` and the serial stays 0.
    """

    k: int | None = 0
    concrete: bool = False

    @classmethod
    def abstract(cls, k: int) -> KCFA:
        if k < 0:
            raise ValueError("k must be non-negative")
        return cls(k=k, concrete=False)

    @classmethod
    def exact(cls) -> KCFA:
        return cls(k=None, concrete=True)

    def trunc(self, ctx: tuple) -> tuple:
        return ctx if self.k is None else ctx[: self.k]

    def _n(self, t: Time) -> int:
        return t.n + 1 if self.concrete else 0

    def alloc(self, site: tuple, t: Time) -> Addr:
        return Addr(site, t.ctx, t.n)

    def tick(self, t: Time) -> Time:
        """Time unchanged up to the serial (variable, return, and control rows)."""
        return Time(t.label, t.ctx, self._n(t))

    def push(self, t: Time, label) -> Time:
        """Entering an application labelled ``label``."""
        return Time(label, t.ctx, self._n(t))

    def call(self, t: Time, site_label) -> Time:
        """Procedure entry: prepend the call site to the contour."""
        return Time(None, self.trunc((site_label,) + t.ctx), self._n(t))

    def write(self, store: Store, addr, val) -> Store:
        """Assignment-like write: overwrite concretely, join abstractly."""
        if self.concrete:
            return store.update(addr, (val,))
        return store.join((addr, val))

    def fresh(self, store: Store, addr) -> None:
        if self.concrete and addr in store:
            raise FreshnessError(f"allocated address {addr} already in store")

    def alpha_addr(self, a):
        if isinstance(a, Addr):
            return Addr(a.site, a.ctx[: self.k] if self.k is not None else a.ctx, 0)
        return a

    def alpha_time(self, t):
        if isinstance(t, Time):
            return Time(t.label, t.ctx[: self.k] if self.k is not None else t.ctx, 0)
        return t
