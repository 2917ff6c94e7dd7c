"""Penman corpus I/O and a seeded synthetic sentence/graph generator."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .amr_graph import AmrError, AmrGraph, Attribute, Edge, parse_penman, serialize_penman, traverse

__all__ = [
    "Example",
    "GenSpec",
    "CorpusError",
    "BadRatios",
    "load_corpus",
    "parse_corpus",
    "write_corpus",
    "generate",
    "verbalize",
    "split",
    "write_manifest",
    "read_manifest",
    "concept_word",
]


class CorpusError(AmrError, ValueError):
    def __init__(self, errors: list[tuple[int, Exception]]):
        self.errors = errors
        msg = "; ".join(f"block {i}: {e}" for i, e in errors)
        super().__init__(f"{len(errors)} block(s) failed to parse: {msg}")


class BadRatios(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    id: str
    sentence: tuple[str, ...]
    graph: AmrGraph
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.sentence:
            raise ValueError(f"example {self.id}: empty sentence")


# ---------------------------------------------------------------------------
# file format


def _blocks(text: str) -> list[str]:
    return [b for b in re.split(r"\n\s*\n", text) if b.strip()]


def concept_word(concept: str) -> str:
    """Surface word for a concept: the sense suffix is glued on (bala-01 -> bala1)."""
    m = re.match(r"^(.*)-0*(\d+)$", concept)
    if m and m.group(1):
        return f"{m.group(1)}{m.group(2)}"
    return concept


def parse_corpus(text: str, stem: str = "doc") -> list[Example]:
    examples, errors = [], []
    for i, block in enumerate(_blocks(text)):
        try:
            g = parse_penman(block)
        except AmrError as exc:
            errors.append((i, exc))
            continue
        meta = dict(g.metadata)
        if meta.get("snt", "").strip():
            sentence = tuple(meta["snt"].split())
        else:
            sentence = tuple(concept_word(g.concept(ev[1])) for ev in traverse(g) if ev[0] == "open")
            meta["snt_synthesized"] = "1"
        examples.append(Example(meta.get("id", f"{stem}.{i}"), sentence, g, meta))
    if errors:
        raise CorpusError(errors)
    return examples


def load_corpus(path: str | Path) -> list[Example]:
    path = Path(path)
    return parse_corpus(path.read_text(encoding="utf-8"), path.stem)


def write_corpus(path: str | Path, examples: Sequence[Example]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(format_example(ex) + "\n\n")


def format_example(ex: Example) -> str:
    lines = [f"# ::id {ex.id}", f"# ::snt {' '.join(ex.sentence)}"]
    for k, v in ex.metadata.items():
        if k not in ("id", "snt"):
            lines.append(f"# ::{k} {v}")
    lines.append(serialize_penman(ex.graph, indent=4))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# synthetic generator

_ROLES = ["ARG0", "ARG1", "ARG2", "ARG3", "op1", "op2", "mod", "time", "location", "purpose", "manner", "poss"]
_CONNECTIVE = {
    "ARG0": "by",
    "ARG1": "of",
    "ARG2": "to",
    "ARG3": "with",
    "op1": "first",
    "op2": "second",
    "mod": "kind",
    "time": "when",
    "location": "at",
    "purpose": "for",
    "manner": "how",
    "poss": "whose",
}
_NUMBER_WORDS = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"]
_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]


@dataclass(frozen=True)
class GenSpec:
    n_examples: int = 2000
    max_depth: int = 5
    max_children: int = 3
    concept_vocab_size: int = 200
    role_vocab_size: int = 12
    reentrancy_prob: float = 0.1
    seed: int = 0
    max_nodes: int = 24
    attribute_prob: float = 0.05

    def __post_init__(self):
        for name in ("n_examples", "max_depth", "max_children", "concept_vocab_size", "role_vocab_size", "max_nodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.role_vocab_size > len(_ROLES):
            raise ValueError(f"at most {len(_ROLES)} roles available")
        for name in ("reentrancy_prob", "attribute_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def _concept_inventory(n: int) -> list[str]:
    # fixed inventory independent of the seed: two-syllable stems, every third a predicate
    stems = [a + b + c + d for a in _ONSETS for b in _VOWELS for c in _ONSETS for d in _VOWELS]
    out = []
    for i in range(n):
        stem = stems[(i * 7919) % len(stems)]
        out.append(f"{stem}-0{1 + (i // 3) % 3}" if i % 3 == 0 else stem)
    return out


def _gen_graph(rng: np.random.Generator, spec: GenSpec, concepts: list[str], roles: list[str]) -> AmrGraph:
    nodes: list[tuple[str, str]] = []
    edges: list[Edge] = []
    attrs: list[Attribute] = []
    parent_of: dict[str, list[str]] = {}
    out_edges: dict[str, list[str]] = {}
    seq = 0

    def new_node() -> str:
        var = f"n{len(nodes)}"
        nodes.append((var, concepts[int(rng.integers(len(concepts)))]))
        parent_of[var] = []
        out_edges[var] = []
        return var

    def reaches(a: str, b: str) -> bool:
        stack, seen = [a], {a}
        while stack:
            v = stack.pop()
            if v == b:
                return True
            for w in out_edges[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    root = new_node()
    # depth-first growth keeps sibling order equal to creation order
    stack = [(root, 0)]
    expanded: list[str] = []
    while stack:
        var, depth = stack.pop()
        expanded.append(var)
        if depth >= spec.max_depth:
            continue
        lo = 1 if depth == 0 else 0
        p_stop = 0.35 + 0.1 * depth
        n_kids = lo
        while n_kids < spec.max_children and rng.random() > p_stop:
            n_kids += 1
        used_roles = list(rng.permutation(len(roles))[:n_kids])
        new_kids = []
        for r in used_roles:
            role = roles[int(r)]
            if len(nodes) >= spec.max_nodes:
                break
            target = None
            if spec.reentrancy_prob > 0 and rng.random() < spec.reentrancy_prob:
                pool = [v for v in expanded if v != var and not reaches(v, var) and v not in out_edges[var]]
                if pool:
                    target = pool[int(rng.integers(len(pool)))]
            if target is None:
                target = new_node()
                new_kids.append((target, depth + 1))
            edges.append(Edge(var, role, target, False, seq))
            out_edges[var].append(target)
            seq += 1
        if rng.random() < spec.attribute_prob:
            if rng.random() < 0.5:
                attrs.append(Attribute(var, "polarity", "-", seq))
            else:
                attrs.append(Attribute(var, "quant", str(int(rng.integers(1, 10))), seq))
            seq += 1
        stack.extend(reversed(new_kids))
    return AmrGraph(nodes, edges, attrs, root)


def verbalize(g: AmrGraph) -> tuple[str, ...]:
    """Deterministic surface string for a graph.

    Concepts are read in L2R DFS order, each child introduced by a connective
    derived from its role; nodes with children are closed by ``end``.  A
    re-mentioned node is ``same <word>`` plus an ordinal when its concept is
    not unique.
    """
    words: list[str] = []
    concept_count: dict[str, int] = {}
    for v, c in g.nodes:
        concept_count[c] = concept_count.get(c, 0) + 1
    ordinal: dict[str, int] = {}
    seen_per_concept: dict[str, int] = {}
    has_kids = {v: bool(g.children(v)) for v in g.variables}
    for ev in traverse(g):
        kind = ev[0]
        if kind == "open":
            var = ev[1]
            c = g.concept(var)
            ordinal[var] = seen_per_concept.get(c, 0)
            seen_per_concept[c] = ordinal[var] + 1
            words.append(concept_word(c))
        elif kind == "role":
            item = ev[1]
            role = item.role if isinstance(item, Attribute) else item.surface_role
            base = role[:-3] if role.endswith("-of") else role
            words.append(_CONNECTIVE.get(base, base))
            if role.endswith("-of"):
                words.append("inverse")
        elif kind == "ref":
            var = ev[1]
            c = g.concept(var)
            words += ["same", concept_word(c)]
            if concept_count[c] > 1:
                words.append(_NUMBER_WORDS[ordinal[var] % 10] if ordinal[var] < 10 else str(ordinal[var]))
        elif kind == "const":
            a = ev[1]
            if a.role == "polarity":
                words[-1] = "not"
            else:
                words.append(_NUMBER_WORDS[int(a.value)] if a.value.isdigit() and int(a.value) < 10 else a.value)
        elif kind == "close" and has_kids[ev[1]]:
            words.append("end")
    return tuple(words)


def generate(spec: GenSpec = GenSpec()) -> list[Example]:
    rng = np.random.default_rng(spec.seed)
    concepts = _concept_inventory(spec.concept_vocab_size)
    roles = _ROLES[: spec.role_vocab_size]
    out = []
    width = len(str(spec.n_examples - 1))
    for i in range(spec.n_examples):
        g = _gen_graph(rng, spec, concepts, roles)
        ex_id = f"syn-{spec.seed}-{i:0{width}d}"
        out.append(Example(ex_id, verbalize(g), g.with_metadata(id=ex_id), {"id": ex_id}))
    return out


def split(corpus: Sequence, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Seeded disjoint (train, dev, test) partition."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise BadRatios(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(corpus)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_dev = min(n - n_train, int(round(ratios[1] * n)))
    parts = (perm[:n_train], perm[n_train : n_train + n_dev], perm[n_train + n_dev :])
    return tuple([corpus[int(i)] for i in sorted(p)] for p in parts)


def write_manifest(path: str | Path, splits: dict[str, Sequence[Example]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id\tsplit\n")
        for name, exs in splits.items():
            for ex in exs:
                fh.write(f"{ex.id}\t{name}\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        next(fh, None)
        for line in fh:
            if line.strip():
                ex_id, name = line.rstrip("\n").split("\t")
                out[ex_id] = name
    return out
