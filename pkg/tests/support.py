"""Shared helpers for the test-suite: corpus loading and random programs."""

from __future__ import annotations

import json
import random
from pathlib import Path

from aam import analysis, lazy
from aam.core import KCFA
from aam.syntax import parse

HERE = Path(__file__).parent
CORPUS = HERE / "corpus"
GOLDENS = HERE / "goldens" / "state_counts.json"

# one "PASS/FAIL Cn: ..." line per acceptance criterion, printed at session end
ACCEPTANCE: list[str] = []


def report(cid: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {cid}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


# which abstract family analyzes each corpus directory
FAMILY_OF = {"pure": "cesk-star", "ext": "extended", "exc": "ceshk", "sec": "cm"}


def load(group: str) -> list[tuple[str, object]]:
    out = []
    for path in sorted((CORPUS / group).glob("*.scm")):
        out.append((path.stem, parse(path.read_text(encoding="utf-8"))))
    return out


def source(group: str, name: str) -> str:
    return (CORPUS / group / f"{name}.scm").read_text(encoding="utf-8")


def everything() -> list[tuple[str, str, object]]:
    """(group, name, expr) for every corpus program."""
    return [(g, n, e) for g in FAMILY_OF for n, e in load(g)]


def family_for(group: str, variant: str = "baseline"):
    return analysis.family(FAMILY_OF[group], variant)


def golden_families() -> list[tuple[str, str, str]]:
    """(key, group, family-name/variant) combinations with frozen state counts."""
    rows = [(FAMILY_OF[g], g, FAMILY_OF[g]) for g in FAMILY_OF]
    rows += [(f"lk-star/{v}", "pure", f"lk/{v}") for v in lazy.VARIANTS]
    return rows


def count_states() -> dict:
    """Reachable abstract state counts for every golden family, program and k."""
    out: dict = {}
    for key, group, fam_name in golden_families():
        name, _, variant = fam_name.partition("/")
        fam = analysis.family(name, variant or "baseline")
        table = out.setdefault(key, {})
        for prog, e in load(group):
            table[prog] = {f"k{k}": len(fam.aval(e, KCFA.abstract(k)).states) for k in (0, 1)}
    return out


def read_goldens() -> dict:
    return json.loads(GOLDENS.read_text(encoding="utf-8"))


def write_goldens() -> None:
    GOLDENS.parent.mkdir(exist_ok=True)
    GOLDENS.write_text(json.dumps(count_states(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


# -- random programs ----------------------------------------------------------------


def random_term_text(rng: random.Random, depth: int, scope: tuple = ()) -> str:
    """A closed pure λ-term (as text) of bounded depth."""
    roll = rng.random()
    if depth <= 0 or roll < 0.2:
        if scope and rng.random() < 0.7:
            return rng.choice(scope)
        v = f"v{len(scope)}"
        body = rng.choice(scope + (v,)) if depth <= 0 else random_term_text(rng, depth - 1, scope + (v,))
        return f"(lambda ({v}) {body})"
    if roll < 0.45:
        v = f"v{len(scope)}"
        return f"(lambda ({v}) {random_term_text(rng, depth - 1, scope + (v,))})"
    return f"({random_term_text(rng, depth - 1, scope)} {random_term_text(rng, depth - 1, scope)})"


def random_term(rng: random.Random, depth: int = 5):
    return parse(random_term_text(rng, depth))


if __name__ == "__main__":  # regenerate goldens: python tests/support.py
    write_goldens()
    print(f"wrote {GOLDENS}")
