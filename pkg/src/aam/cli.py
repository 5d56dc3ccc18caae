"""Command-line driver: ``aam run|analyze|check``."""

from __future__ import annotations

import argparse
import json
import sys

from . import analysis, concrete, control, lazy, security
from .concrete import OpenTermError, default_fuel, show
from .core import KCFA
from .engine import Graph
from .gc import collect
from .syntax import ParseError, Program, annotate, parse

MACHINES = ("cek", "cesk", "cesk-star", "cesk-star-t", "lk", "lk-star", "extended", "ceshk", "cm")
OPTION_KEYS = ("machine", "k", "gc", "widen", "fuel", "permissions", "variant", "out", "format")
DEFAULTS = {
    "machine": "cesk-star",
    "k": 0,
    "gc": False,
    "widen": None,
    "permissions": None,
    "variant": "baseline",
    "out": None,
    "format": None,
}
ERROR_KINDS = {"stuck", "uncaught", "fail"}


class UsageError(Exception):
    pass


# -- emission ---------------------------------------------------------------------


def _node_label(s) -> str:
    c = s.control
    lab = getattr(c, "label", None)
    head = show(c) if lab is None else f"ℓ{lab} {show(c)}"
    return f"{head} | {s.kont}"


def emit_graph(graph: Graph, fmt: str, prog: Program | None = None) -> str:
    """Render reachable states and transitions as DOT or JSON."""
    if fmt == "dot":
        lines = ["digraph states {", "  node [shape=box, fontname=monospace];"]
        for i, s in enumerate(graph.states):
            text = _node_label(s).replace("\\", "\\\\").replace('"', '\\"')
            lines.append(f'  s{i} [label="{i}: {text}"];')
        for i, j in graph.edges:
            lines.append(f"  s{i} -> s{j};")
        lines.append("}")
        return "\n".join(lines) + "\n"
    if fmt == "json":
        flows = analysis.flow_table(analysis.flow_facts(graph.states, prog)) if prog is not None else {}
        doc = {
            "states": [
                {
                    "id": i,
                    "control": show(s.control),
                    "label": getattr(s.control, "label", None),
                    "kont": str(s.kont),
                    "store_size": len(s.store),
                }
                for i, s in enumerate(graph.states)
            ],
            "edges": [[i, j] for i, j in graph.edges],
            "flows": {str(k): [v if isinstance(v, int) else str(v) for v in vs] for k, vs in flows.items()},
            "terminals": analysis.terminal_summary(graph),
        }
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    raise UsageError(f"unknown format {fmt!r}")


def trace_graph(states: list) -> Graph:
    n = len(states)
    edges = [(i, i + 1) for i in range(n - 1)]
    return Graph(list(states), edges, {i: ([i + 1] if i + 1 < n else []) for i in range(n)})


# -- options ----------------------------------------------------------------------


def read_config(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, val = (x.strip() for x in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in OPTION_KEYS:
                raise UsageError(f"{path}:{n}: unknown option {key!r}")
            out[key] = val.strip("\"'")
    return out


def _coerce(opts: dict) -> dict:
    try:
        if isinstance(opts.get("k"), str):
            opts["k"] = int(opts["k"])
        if isinstance(opts.get("fuel"), str):
            opts["fuel"] = int(opts["fuel"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if isinstance(opts.get("gc"), str):
        opts["gc"] = opts["gc"].lower() in ("1", "true", "yes", "on")
    if isinstance(opts.get("permissions"), str):
        opts["permissions"] = [p for p in opts["permissions"].split(",") if p.strip()]
    return opts


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aam", description="Abstract machine interpreters and analyzers.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run a concrete machine and print its trace"),
        ("analyze", "explore the abstract state space"),
        ("check", "lock-step and soundness checks"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("file")
        p.add_argument("--machine", choices=MACHINES)
        p.add_argument("--k", type=int)
        p.add_argument("--gc", action="store_const", const=True)
        p.add_argument("--widen", choices=("global-store",))
        p.add_argument("--fuel", type=int)
        p.add_argument("--permissions")
        p.add_argument("--variant", choices=lazy.VARIANTS)
        p.add_argument("--out")
        p.add_argument("--format", choices=("dot", "json"))
        p.add_argument("--config", help="key = value option file (flags take precedence)")
        if name == "check":
            p.add_argument("--lockstep", action="store_true")
            p.add_argument("--soundness", action="store_true")
    return ap


def resolve_options(ns: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    opts["fuel"] = default_fuel()
    if ns.config:
        opts.update(read_config(ns.config))
    opts.update({k: getattr(ns, k) for k in OPTION_KEYS if getattr(ns, k) is not None})
    opts = _coerce(opts)
    if opts["machine"] not in MACHINES:
        raise UsageError(f"unknown machine {opts['machine']!r}")
    if opts["variant"] not in lazy.VARIANTS:
        raise UsageError(f"unknown variant {opts['variant']!r}")
    if opts["k"] < 0 or opts["fuel"] < 0:
        raise UsageError("--k and --fuel must be non-negative")
    if opts["widen"] not in (None, "global-store"):
        raise UsageError(f"unknown widening {opts['widen']!r}")
    if opts["widen"] and opts["gc"]:
        raise UsageError("--widen global-store cannot be combined with --gc")
    return opts


def load_program(path: str, opts: dict):
    with open(path, encoding="utf-8") as fh:
        e = parse(fh.read())
    if opts.get("permissions") and opts["machine"] == "cm":
        e = annotate(e, opts["permissions"])
    concrete.check_closed(e)
    return e


def _write(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- commands ---------------------------------------------------------------------


def concrete_trace(e, opts: dict):
    """Run the concrete machine named by ``opts``; returns (states, status)."""
    m, fuel = opts["machine"], opts["fuel"]
    if m in concrete.MACHINES:
        mach = concrete.MACHINES[m]
        step = mach.step
        init = mach.inject(e)
        if opts["gc"] and m in ("cesk-star", "cesk-star-t"):
            init = collect(init)

            def step(s, base=mach.step):
                n = base(s)
                return None if n is None else collect(n)

        tr = concrete.run(init, step, mach.final, fuel)
        return tr.states, tr.status
    if m == "lk":
        tr = lazy.lk_run(e, fuel)
    elif m == "lk-star":
        tr = lazy.star_trace(e, fuel, opts["variant"])
    elif m == "extended":
        tr = control.ext_trace(e, fuel)
    elif m == "ceshk":
        tr = control.ceshk_trace(e, fuel)
    else:
        tr = security.cm_run(e, fuel, security.universe_of(e, opts.get("permissions") or ()))
        return tr.states, tr.status
    status = tr.status
    if status == "stuck" and m in ("extended", "ceshk"):
        kinds = control.classify(tr.last)
        status = next(iter(kinds)) if kinds else "stuck"
    return tr.states, status


def cmd_run(e, opts: dict) -> int:
    states, status = concrete_trace(e, opts)
    if opts["format"]:
        _write(emit_graph(trace_graph(states), opts["format"]), opts["out"])
    else:
        _write("".join(f"{i}: {s}\n" for i, s in enumerate(states)), opts["out"])
    print(f"status: {status} after {len(states) - 1} steps", file=sys.stderr)
    return 1 if status in ERROR_KINDS else 0


def analyze(e, opts: dict) -> Graph:
    fam = analysis.family(opts["machine"], opts["variant"], opts.get("permissions"))
    p = KCFA.abstract(opts["k"])
    if opts["widen"]:
        sys_ = fam.widened(e, p)
        g = analysis.widened_graph(sys_)
        g.iterations = sys_.iterations
        return g
    return fam.aval(e, p, gc=opts["gc"])


def cmd_analyze(e, opts: dict) -> int:
    g = analyze(e, opts)
    prog = Program.of(e)
    fmt = opts["format"] or (("json" if opts["out"].endswith(".json") else "dot") if opts["out"] else None)
    terms = analysis.terminal_summary(g)
    if fmt:
        _write(emit_graph(g, fmt, prog), opts["out"])
    else:
        sizes = [len(s.store) for s in g.states]
        print(f"states: {len(g.states)}  edges: {len(g.edges)}")
        print(f"store size: min {min(sizes)} max {max(sizes)} mean {sum(sizes) / len(sizes):.1f}")
        if hasattr(g, "iterations"):
            print(f"iterations: {g.iterations}")
        print(f"terminals: {terms}")
        for app, ops in analysis.flow_table(analysis.flow_facts(g.states, prog)).items():
            print(f"  app {app} <- {ops}")
        extra = (
            ("thunks", lazy.thunk_facts(g) if opts["machine"] in ("lk", "lk-star") else {}),
            ("handlers", analysis.handler_facts(g.states, prog)),
            ("escapes", analysis.escape_facts(g.states, prog)),
            ("tests", security.test_facts(g) if opts["machine"] == "cm" else {}),
        )
        for name, facts in extra:
            if facts:
                print(f"{name}: {facts}")
    return 1 if ERROR_KINDS & set(terms) else 0


def cmd_check(e, opts: dict, lockstep: bool, soundness: bool) -> int:
    if not (lockstep or soundness):
        lockstep = soundness = True
    m = opts["machine"]
    ok = True
    if lockstep:
        fuel = min(opts["fuel"], 1000)
        if m in concrete.MACHINES:
            rep = concrete.lockstep_check(e, fuel)
            agreed, msg = rep.agreed, str(rep)
        elif m in ("lk", "lk-star"):
            agreed, steps, status = lazy.lockstep_check(e, fuel)
            msg = f"LK vs LK*: {'agree' if agreed else 'diverge'} over {steps} steps ({status})"
        elif m == "cm":
            agreed, steps, status = security.lockstep_check(e, fuel, security.universe_of(e, opts.get("permissions") or ()))
            msg = f"CM vs CM*: {'agree' if agreed else 'diverge'} over {steps} steps ({status})"
        else:
            agreed, msg = True, f"lock-step: no recursive counterpart for {m}; skipped"
        print(msg)
        ok &= agreed
    if soundness:
        fam = analysis.family(m, opts["variant"], opts.get("permissions"))
        p = KCFA.abstract(opts["k"])
        fuel = min(opts["fuel"], 500)
        trace = fam.trace(e, fuel)
        graph = fam.aval(e, p)
        from .engine import simulate

        rep = simulate(trace.states, graph, p)
        print(f"soundness (k={opts['k']}, {fam.name}): {rep}")
        ok &= rep.ok
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        opts = resolve_options(ns)
        e = load_program(ns.file, opts)
    except (UsageError, ParseError, OpenTermError, OSError) as exc:
        print(f"aam: error: {exc}", file=sys.stderr)
        return 2
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 20000))
    if ns.command == "run":
        return cmd_run(e, opts)
    if ns.command == "analyze":
        return cmd_analyze(e, opts)
    return cmd_check(e, opts, ns.lockstep, ns.soundness)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
