"""Small named graphs used by the CLI and tests."""
from __future__ import annotations

from .amr_graph import AmrGraph, parse_penman

# "Come to study and learn"
G1_PENMAN = "(c / come-01 :purpose (a / and :op1 (s / study-01) :op2 (l / learn-01)))"
G1_SENTENCE = ("come", "to", "study", "and", "learn")

FIXTURES = {"g1": G1_PENMAN}


def fixture(name: str) -> AmrGraph:
    try:
        text = FIXTURES[name.lower()]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(sorted(FIXTURES))}") from None
    return parse_penman(text)
