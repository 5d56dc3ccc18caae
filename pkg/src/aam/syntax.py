"""Labelled abstract syntax, the s-expression reader, and syntactic utilities."""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from typing import Iterator

from .core import record

RESERVED = frozenset(
    {"if", "set!", "callcc", "throw", "catch", "fail", "grant", "test", "frame", "lambda", "λ", "#f"}
)


class Expr:
    """Base class of labelled expressions."""

    label: int

    def children(self) -> tuple:
        return ()


class Value(Expr):
    """Syntactic values: λ-abstractions, #f and callcc."""


@record
class Ref(Expr):
    name: str
    label: int = -1


@record
class App(Expr):
    fn: Expr
    arg: Expr
    label: int = -1

    def children(self):
        return (self.fn, self.arg)


@record
class Lam(Value):
    var: str
    body: Expr
    label: int = -1

    def children(self):
        return (self.body,)


@record
class If(Expr):
    test: Expr
    then: Expr
    orelse: Expr
    label: int = -1

    def children(self):
        return (self.test, self.then, self.orelse)


@record
class SetBang(Expr):
    var: str
    expr: Expr
    label: int = -1

    def children(self):
        return (self.expr,)


@record
class Throw(Expr):
    expr: Expr
    label: int = -1

    def children(self):
        return (self.expr,)


@record
class Catch(Expr):
    body: Expr
    handler: Lam
    label: int = -1

    def children(self):
        return (self.body, self.handler)


@record
class Fail(Expr):
    label: int = -1


@record
class Grant(Expr):
    perms: frozenset
    body: Expr
    label: int = -1

    def children(self):
        return (self.body,)


@record
class Test(Expr):
    perms: frozenset
    then: Expr
    orelse: Expr
    label: int = -1

    def children(self):
        return (self.then, self.orelse)


@record
class Frame(Expr):
    perms: frozenset
    body: Expr
    label: int = -1

    def children(self):
        return (self.body,)


@record
class FalseLit(Value):
    label: int = -1


@record
class Callcc(Value):
    label: int = -1


class ParseError(ValueError):
    def __init__(self, message: str, pos: int | None = None, line: int | None = None, col: int | None = None):
        self.message, self.pos, self.line, self.col = message, pos, line, col
        if line is not None:
            message = f"{message} (line {line}, column {col})"
        elif pos is not None:
            message = f"{message} (at offset {pos})"
        super().__init__(message)


# -- reader -----------------------------------------------------------------

_TOKEN = re.compile(r"\s+|;[^\n]*|(\()|(\))|([^\s();]+)")


@dataclass
class _Atom:
    text: str
    pos: int


@dataclass
class _List:
    items: list
    pos: int


def _read(text: str):
    stack: list[_List] = [_List([], 0)]
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # pragma: no cover - the pattern covers every character
            raise ParseError("unreadable input", pos)
        if m.group(1):
            stack.append(_List([], pos))
        elif m.group(2):
            if len(stack) == 1:
                raise ParseError("unbalanced ')'", pos)
            done = stack.pop()
            stack[-1].items.append(done)
        elif m.group(3):
            stack[-1].items.append(_Atom(m.group(3), pos))
        pos = m.end()
    if len(stack) != 1:
        raise ParseError("unclosed '('", stack[-1].pos)
    top = stack[0].items
    if len(top) != 1:
        raise ParseError(f"expected exactly one program form, found {len(top)}", 0)
    return top[0]


class _Builder:
    def __init__(self):
        self.next = 0

    def fresh(self) -> int:
        n = self.next
        self.next += 1
        return n

    def var(self, node) -> str:
        if not isinstance(node, _Atom) or node.text in RESERVED:
            raise ParseError("expected a variable name", node.pos)
        return node.text

    def perms(self, node) -> frozenset:
        if not isinstance(node, _List):
            raise ParseError("permission set must be a literal list like (p q)", node.pos)
        names = []
        for item in node.items:
            if not isinstance(item, _Atom) or item.text in RESERVED:
                raise ParseError("permission names must be plain symbols", item.pos)
            names.append(item.text)
        return frozenset(names)

    def lam(self, node, label: int) -> Lam:
        items = node.items
        if len(items) != 3 or not isinstance(items[1], _List) or len(items[1].items) != 1:
            raise ParseError("lambda takes exactly one parameter: (lambda (x) e)", node.pos)
        x = self.var(items[1].items[0])
        return Lam(x, self.build(items[2]), label)

    def build(self, node) -> Expr:
        label = self.fresh()
        if isinstance(node, _Atom):
            t = node.text
            if t == "#f":
                return FalseLit(label)
            if t == "callcc":
                return Callcc(label)
            if t in RESERVED:
                raise ParseError(f"'{t}' is a reserved form", node.pos)
            return Ref(t, label)
        items = node.items
        if not items:
            raise ParseError("empty application", node.pos)
        head = items[0].text if isinstance(items[0], _Atom) else None

        def arity(n: int):
            if len(items) != n + 1:
                raise ParseError(f"'{head}' expects {n} operand(s), got {len(items) - 1}", node.pos)

        if head in ("lambda", "λ"):
            return self.lam(node, label)
        if head == "if":
            arity(3)
            return If(self.build(items[1]), self.build(items[2]), self.build(items[3]), label)
        if head == "set!":
            arity(2)
            return SetBang(self.var(items[1]), self.build(items[2]), label)
        if head == "throw":
            arity(1)
            v = self.build(items[1])
            if not isinstance(v, Value):
                raise ParseError("throw takes a syntactic value (lambda, #f or callcc)", items[1].pos)
            return Throw(v, label)
        if head == "catch":
            arity(2)
            body = self.build(items[1])
            handler = self.build(items[2])
            if not isinstance(handler, Lam):
                raise ParseError("catch handler must be a lambda", items[2].pos)
            return Catch(body, handler, label)
        if head == "fail":
            arity(0)
            return Fail(label)
        if head == "grant":
            arity(2)
            return Grant(self.perms(items[1]), self.build(items[2]), label)
        if head == "frame":
            arity(2)
            return Frame(self.perms(items[1]), self.build(items[2]), label)
        if head == "test":
            arity(3)
            perms = self.perms(items[1])
            return Test(perms, self.build(items[2]), self.build(items[3]), label)
        if head in RESERVED and head not in ("callcc", "#f"):
            raise ParseError(f"malformed '{head}' form", node.pos)
        if len(items) != 2:
            raise ParseError("applications take exactly one operand", node.pos)
        return App(self.build(items[0]), self.build(items[1]), label)


def parse(text: str) -> Expr:
    """Read one program; labels are assigned in pre-order starting at 0."""
    try:
        return _Builder().build(_read(text))
    except ParseError as exc:
        if exc.pos is None or exc.line is not None:
            raise
        line = text.count("\n", 0, exc.pos) + 1
        col = exc.pos - (text.rfind("\n", 0, exc.pos) + 1) + 1
        raise ParseError(exc.message, exc.pos, line, col) from None


def unparse(e: Expr) -> str:
    def perms(ps):
        return "(" + " ".join(sorted(ps)) + ")"

    if isinstance(e, Ref):
        return e.name
    if isinstance(e, Lam):
        return f"(lambda ({e.var}) {unparse(e.body)})"
    if isinstance(e, App):
        return f"({unparse(e.fn)} {unparse(e.arg)})"
    if isinstance(e, FalseLit):
        return "#f"
    if isinstance(e, Callcc):
        return "callcc"
    if isinstance(e, If):
        return f"(if {unparse(e.test)} {unparse(e.then)} {unparse(e.orelse)})"
    if isinstance(e, SetBang):
        return f"(set! {e.var} {unparse(e.expr)})"
    if isinstance(e, Throw):
        return f"(throw {unparse(e.expr)})"
    if isinstance(e, Catch):
        return f"(catch {unparse(e.body)} {unparse(e.handler)})"
    if isinstance(e, Fail):
        return "(fail)"
    if isinstance(e, Grant):
        return f"(grant {perms(e.perms)} {unparse(e.body)})"
    if isinstance(e, Frame):
        return f"(frame {perms(e.perms)} {unparse(e.body)})"
    if isinstance(e, Test):
        return f"(test {perms(e.perms)} {unparse(e.then)} {unparse(e.orelse)})"
    raise TypeError(f"not an expression: {e!r}")


def subexprs(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children()))


@functools.lru_cache(maxsize=None)
def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Ref):
        return frozenset((e.name,))
    if isinstance(e, Lam):
        return free_vars(e.body) - {e.var}
    if isinstance(e, SetBang):
        return free_vars(e.expr) | {e.var}
    out = frozenset()
    for c in e.children():
        out |= free_vars(c)
    return out


def is_closed(e: Expr) -> bool:
    return not free_vars(e)


def relabel(e: Expr) -> Expr:
    """Reassign labels in pre-order from 0."""
    counter = iter(range(1 << 62))

    def go(node: Expr) -> Expr:
        label = next(counter)
        if isinstance(node, Ref):
            return Ref(node.name, label)
        if isinstance(node, Lam):
            return Lam(node.var, go(node.body), label)
        if isinstance(node, App):
            fn = go(node.fn)
            return App(fn, go(node.arg), label)
        if isinstance(node, If):
            t = go(node.test)
            th = go(node.then)
            return If(t, th, go(node.orelse), label)
        if isinstance(node, SetBang):
            return SetBang(node.var, go(node.expr), label)
        if isinstance(node, Throw):
            return Throw(go(node.expr), label)
        if isinstance(node, Catch):
            b = go(node.body)
            return Catch(b, go(node.handler), label)
        if isinstance(node, Grant):
            return Grant(node.perms, go(node.body), label)
        if isinstance(node, Frame):
            return Frame(node.perms, go(node.body), label)
        if isinstance(node, Test):
            th = go(node.then)
            return Test(node.perms, th, go(node.orelse), label)
        return type(node)(label)

    return go(e)


def annotate(e: Expr, perms) -> Expr:
    """Trusted annotator for the stack-inspection language.

    Wraps every λ-body in ``(frame R ·)`` and intersects every grant with R.
    """
    perms = frozenset(perms)

    def go(node: Expr) -> Expr:
        if isinstance(node, Lam):
            return Lam(node.var, Frame(perms, go(node.body)))
        if isinstance(node, Grant):
            return Grant(node.perms & perms, go(node.body))
        if isinstance(node, App):
            return App(go(node.fn), go(node.arg))
        if isinstance(node, If):
            return If(go(node.test), go(node.then), go(node.orelse))
        if isinstance(node, SetBang):
            return SetBang(node.var, go(node.expr))
        if isinstance(node, Throw):
            return Throw(go(node.expr))
        if isinstance(node, Catch):
            return Catch(go(node.body), go(node.handler))
        if isinstance(node, Frame):
            return Frame(node.perms, go(node.body))
        if isinstance(node, Test):
            return Test(node.perms, go(node.then), go(node.orelse))
        return node

    return relabel(go(e))


@dataclass(frozen=True)
class Program:
    """A parsed program plus label-indexed lookup tables."""

    expr: Expr
    nodes: dict
    parent: dict

    @classmethod
    def of(cls, e: Expr) -> Program:
        nodes, parent = {}, {}
        for node in subexprs(e):
            if node.label in nodes:
                raise ValueError(f"duplicate label {node.label}")
            nodes[node.label] = node
            for c in node.children():
                parent[c.label] = node.label
        return cls(e, nodes, parent)

    def count(self, kind) -> int:
        return sum(1 for n in self.nodes.values() if isinstance(n, kind))

    def variables(self) -> frozenset:
        out = set()
        for n in self.nodes.values():
            if isinstance(n, (Ref, SetBang)):
                out.add(n.name if isinstance(n, Ref) else n.var)
            elif isinstance(n, Lam):
                out.add(n.var)
        return frozenset(out)
