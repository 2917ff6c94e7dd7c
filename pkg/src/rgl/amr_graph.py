"""AMR graph data model, penman codec and Smatch triple view.

Graphs are stored in canonical direction: an edge written as ``:ARG0-of``
under node ``a`` is kept as ``(b, ARG0, a)`` with ``inverted=True`` so the
annotation's traversal tree can be reproduced.  Child order at every node
follows the order of mention in the source annotation.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Sequence

__all__ = [
    "AmrError",
    "AmrParseError",
    "UnbalancedParens",
    "DanglingRole",
    "DuplicateVariableDefinition",
    "EmptyInput",
    "MissingConcept",
    "UnexpectedToken",
    "InvalidGraph",
    "CyclicGraph",
    "Edge",
    "Attribute",
    "AmrGraph",
    "TripleKind",
    "Triple",
    "TripleSet",
    "parse_penman",
    "serialize_penman",
    "to_triples",
    "traverse",
    "canonical_role",
    "TOP_ROLE",
    "TOP_VALUE",
]

TOP_ROLE = "TOP"
TOP_VALUE = "top"

# roles whose canonical spelling already ends in "-of"
_CANONICAL_OF_ROLES = frozenset({"consist-of", "prep-out-of", "prep-on-behalf-of"})


class AmrError(Exception):
    """Base class for graph errors."""


class AmrParseError(AmrError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class UnbalancedParens(AmrParseError):
    pass


class DanglingRole(AmrParseError):
    pass


class DuplicateVariableDefinition(AmrParseError):
    pass


class EmptyInput(AmrParseError):
    pass


class MissingConcept(AmrParseError):
    pass


class UnexpectedToken(AmrParseError):
    pass


class InvalidGraph(AmrError, ValueError):
    pass


class CyclicGraph(InvalidGraph):
    pass


def canonical_role(role: str) -> tuple[str, bool]:
    """Split a surface role into (canonical role, inverted?)."""
    if role.endswith("-of") and role not in _CANONICAL_OF_ROLES and len(role) > 3:
        return role[:-3], True
    return role, False


def _surface_role(role: str, inverted: bool) -> str:
    return role + "-of" if inverted else role


@dataclass(frozen=True)
class Edge:
    src: str
    role: str
    dst: str
    # written under dst as ":role-of" rather than under src
    inverted: bool = field(default=False, compare=False)
    seq: int = field(default=-1, compare=False)

    @property
    def parent(self) -> str:
        return self.dst if self.inverted else self.src

    @property
    def child(self) -> str:
        return self.src if self.inverted else self.dst

    @property
    def surface_role(self) -> str:
        return _surface_role(self.role, self.inverted)


@dataclass(frozen=True)
class Attribute:
    src: str
    role: str
    value: str
    seq: int = field(default=-1, compare=False)


def _as_edge(e) -> Edge:
    if isinstance(e, Edge):
        return e
    return Edge(*e)


def _as_attr(a) -> Attribute:
    if isinstance(a, Attribute):
        return a
    return Attribute(*a)


@dataclass(frozen=True)
class AmrGraph:
    """Rooted, labeled DAG of concept nodes, role edges and constant attributes.

    ``nodes`` holds ``(var, concept)`` pairs; ``edges`` and ``attributes``
    accept either the dataclasses above or plain tuples.  Construction
    validates every structural invariant and raises :class:`InvalidGraph`.
    """

    nodes: tuple
    edges: tuple = ()
    attributes: tuple = ()
    root: str | None = None
    metadata: tuple = field(default=(), compare=False)

    def __post_init__(self):
        nodes = tuple((str(v), str(c)) for v, c in self.nodes)
        edges = tuple(_as_edge(e) for e in self.edges)
        attrs = tuple(_as_attr(a) for a in self.attributes)
        root = self.root if self.root is not None else (nodes[0][0] if nodes else None)
        meta = self.metadata
        if isinstance(meta, Mapping):
            meta = tuple(meta.items())
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "metadata", tuple(meta))
        _validate(nodes, edges, attrs, root)
        object.__setattr__(self, "edges", _orient(nodes, edges, root))
        object.__setattr__(self, "_concepts", dict(nodes))
        object.__setattr__(self, "_children", _child_index(self))

    @property
    def variables(self) -> list[str]:
        return [v for v, _ in self.nodes]

    @property
    def meta(self) -> dict[str, str]:
        return dict(self.metadata)

    def concept(self, var: str) -> str:
        return self._concepts[var]

    def children(self, var: str) -> list:
        """Edges written under ``var`` and its attributes, in annotation order."""
        return self._children.get(var, [])

    def with_metadata(self, **items: str) -> "AmrGraph":
        meta = dict(self.metadata)
        meta.update(items)
        return replace(self, metadata=tuple(meta.items()))

    def reentrant_nodes(self) -> set[str]:
        counts: dict[str, int] = {}
        for e in self.edges:
            counts[e.child] = counts.get(e.child, 0) + 1
        return {v for v, n in counts.items() if n > 1}

    def __len__(self):
        return len(self.nodes)


def _validate(nodes, edges, attrs, root):
    if not nodes:
        raise InvalidGraph("graph has no nodes")
    seen: set[str] = set()
    for v, _ in nodes:
        if v in seen:
            raise InvalidGraph(f"variable {v!r} defined twice")
        seen.add(v)
    if root not in seen:
        raise InvalidGraph(f"root {root!r} is not a node")
    keys = set()
    for e in edges:
        if e.src not in seen or e.dst not in seen:
            raise InvalidGraph(f"edge {e.src} :{e.role} {e.dst} has an unknown endpoint")
        if e.src == e.dst:
            raise CyclicGraph(f"self loop on {e.src!r}")
        k = (e.src, e.role, e.dst)
        if k in keys:
            raise InvalidGraph(f"duplicate edge {k}")
        keys.add(k)
    akeys = set()
    for a in attrs:
        if a.src not in seen:
            raise InvalidGraph(f"attribute on unknown variable {a.src!r}")
        k = (a.src, a.role, a.value)
        if k in akeys:
            raise InvalidGraph(f"duplicate attribute {k}")
        akeys.add(k)
    # connectivity ignoring direction
    adj: dict[str, list[str]] = {v: [] for v in seen}
    for e in edges:
        adj[e.src].append(e.dst)
        adj[e.dst].append(e.src)
    reached = {root}
    stack = [root]
    while stack:
        for w in adj[stack.pop()]:
            if w not in reached:
                reached.add(w)
                stack.append(w)
    if len(reached) != len(seen):
        missing = sorted(seen - reached)
        raise InvalidGraph(f"nodes not connected to root: {missing}")
    # acyclic in canonical direction
    out: dict[str, list[str]] = {v: [] for v in seen}
    indeg = {v: 0 for v in seen}
    for e in edges:
        out[e.src].append(e.dst)
        indeg[e.dst] += 1
    queue = [v for v, d in indeg.items() if d == 0]
    done = 0
    while queue:
        v = queue.pop()
        done += 1
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    if done != len(seen):
        raise CyclicGraph("graph has a directed cycle")


def _orient(nodes, edges, root) -> tuple:
    """Flip written orientation where needed so every node hangs off the root."""
    edges = list(edges)
    reached = {root}
    while True:
        grew = True
        while grew:
            grew = False
            for e in edges:
                if e.parent in reached and e.child not in reached:
                    reached.add(e.child)
                    grew = True
        if len(reached) == len(nodes):
            return tuple(edges)
        for i, e in enumerate(edges):
            if e.child in reached and e.parent not in reached:
                edges[i] = replace(e, inverted=not e.inverted)
                break


def _child_index(g: AmrGraph) -> dict[str, list]:
    items = []
    for i, e in enumerate(g.edges):
        items.append((e.seq if e.seq >= 0 else math.inf, 0, i, e.parent, e))
    for i, a in enumerate(g.attributes):
        items.append((a.seq if a.seq >= 0 else math.inf, 1, i, a.src, a))
    items.sort(key=lambda t: t[:3])
    index: dict[str, list] = {}
    for *_, owner, item in items:
        index.setdefault(owner, []).append(item)
    return index


# --------------------------------------------------------------------------
# traversal shared by the serializer and the linearizer


def traverse(g: AmrGraph, reverse: bool = False) -> Iterator[tuple]:
    """Depth-first walk from the root yielding events.

    Events are ``("open", var)``, ``("role", item)``, ``("ref", var)``,
    ``("const", attribute)`` and ``("close", var)``.  With ``reverse`` the
    children of every node are visited right to left.  A node is introduced at
    its first visit; later mentions produce ``ref``.
    """
    visited: set[str] = set()
    # explicit stack of (var, iterator over children)
    visited.add(g.root)
    yield ("open", g.root)
    stack = [(g.root, _ordered(g, g.root, reverse))]
    while stack:
        var, it = stack[-1]
        item = next(it, None)
        if item is None:
            stack.pop()
            yield ("close", var)
            continue
        yield ("role", item)
        if isinstance(item, Attribute):
            yield ("const", item)
            continue
        target = item.child
        if target in visited:
            yield ("ref", target)
        else:
            visited.add(target)
            yield ("open", target)
            stack.append((target, _ordered(g, target, reverse)))


def _ordered(g: AmrGraph, var: str, reverse: bool):
    kids = g.children(var)
    return iter(kids[::-1] if reverse else kids)


# --------------------------------------------------------------------------
# penman text


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<lpar>\()
  | (?P<rpar>\))
  | (?P<slash>/)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<badstring>"[^\n]*)
  | (?P<role>:[^\s()"]*)
  | (?P<atom>[^\s()"/:][^\s()"/]*)
    """,
    re.VERBOSE,
)


class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.toks: list[tuple[str, str, int]] = []
        self.metadata: dict[str, str] = {}
        for m in _TOKEN_RE.finditer(text):
            kind = m.lastgroup
            if kind == "ws":
                continue
            if kind == "comment":
                self._metadata_line(m.group())
                continue
            if kind == "badstring":
                raise UnexpectedToken("unterminated string", self.byte(m.start()))
            self.toks.append((kind, m.group(), m.start()))
        self.i = 0

    def _metadata_line(self, line: str):
        body = line.lstrip("#").strip()
        if not body.startswith("::"):
            return
        for chunk in re.split(r"(?:^|\s)::", " " + body):
            chunk = chunk.strip()
            if not chunk:
                continue
            key, _, value = chunk.partition(" ")
            self.metadata[key] = value.strip()

    def byte(self, char_offset: int) -> int:
        return len(self.text[:char_offset].encode("utf-8"))

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def pop(self):
        t = self.peek()
        self.i += 1
        return t

    def end_offset(self) -> int:
        return len(self.text.encode("utf-8"))


@dataclass
class _NodeSpec:
    var: str
    concept: str
    offset: int
    items: list = field(default_factory=list)  # (role, target, offset)


def _parse_node(tk: _Tokens) -> _NodeSpec:
    kind, text, off = tk.pop()
    assert kind == "lpar"
    t = tk.peek()
    if t is None:
        raise UnbalancedParens("unclosed '('", tk.byte(off))
    if t[0] != "atom":
        raise UnexpectedToken(f"expected variable, found {t[1]!r}", tk.byte(t[2]))
    var = tk.pop()[1]
    t = tk.peek()
    if t is None:
        raise UnbalancedParens("unclosed '('", tk.byte(off))
    if t[0] != "slash":
        raise MissingConcept(f"node {var!r} has no concept", tk.byte(t[2]))
    tk.pop()
    t = tk.peek()
    if t is None:
        raise UnbalancedParens("unclosed '('", tk.byte(off))
    if t[0] not in ("atom", "string"):
        raise MissingConcept(f"node {var!r} has no concept", tk.byte(t[2]))
    node = _NodeSpec(var, tk.pop()[1], off)
    while True:
        t = tk.peek()
        if t is None:
            raise UnbalancedParens("unclosed '('", tk.byte(off))
        if t[0] == "rpar":
            tk.pop()
            return node
        if t[0] != "role":
            raise UnexpectedToken(f"unexpected {t[1]!r}", tk.byte(t[2]))
        _, role, roff = tk.pop()
        role = role[1:]
        if not role:
            raise DanglingRole("empty role name", tk.byte(roff))
        t = tk.peek()
        if t is None:
            raise DanglingRole(f"role :{role} has no target", tk.byte(roff))
        if t[0] == "lpar":
            node.items.append((role, _parse_node(tk), roff))
        elif t[0] in ("atom", "string"):
            tk.pop()
            node.items.append((role, (t[0], t[1]), roff))
        else:
            raise DanglingRole(f"role :{role} has no target", tk.byte(roff))


def parse_penman(text: str) -> AmrGraph:
    """Parse one penman block (with optional ``# ::`` metadata lines)."""
    tk = _Tokens(text)
    if not tk.toks:
        raise EmptyInput("no graph in input", 0)
    first = tk.peek()
    if first[0] != "lpar":
        if first[0] == "rpar":
            raise UnbalancedParens("unmatched ')'", tk.byte(first[2]))
        raise UnexpectedToken(f"expected '(', found {first[1]!r}", tk.byte(first[2]))
    top = _parse_node(tk)
    rest = tk.peek()
    if rest is not None:
        if rest[0] == "rpar":
            raise UnbalancedParens("unmatched ')'", tk.byte(rest[2]))
        raise UnexpectedToken(f"trailing {rest[1]!r} after graph", tk.byte(rest[2]))

    order: list[_NodeSpec] = []
    stack = [top]
    while stack:
        n = stack.pop()
        order.append(n)
        stack.extend(t for _, t, _ in n.items if isinstance(t, _NodeSpec))
    order.sort(key=lambda n: n.offset)
    defined: dict[str, _NodeSpec] = {}
    for n in order:
        if n.var in defined:
            raise DuplicateVariableDefinition(f"variable {n.var!r} defined twice", tk.byte(n.offset))
        defined[n.var] = n

    edges: list[Edge] = []
    attrs: list[Attribute] = []
    seq = 0
    for n in order:
        for role, target, _ in n.items:
            if isinstance(target, _NodeSpec):
                dst = target.var
            elif target[0] == "atom" and target[1] in defined:
                dst = target[1]
            else:
                attrs.append(Attribute(n.var, role, target[1], seq))
                seq += 1
                continue
            crole, inv = canonical_role(role)
            if inv:
                edges.append(Edge(dst, crole, n.var, True, seq))
            else:
                edges.append(Edge(n.var, crole, dst, False, seq))
            seq += 1
    nodes = [(n.var, n.concept) for n in order]
    return AmrGraph(nodes, edges, attrs, top.var, tuple(tk.metadata.items()))


def serialize_penman(g: AmrGraph, indent: int | None = None) -> str:
    """Render ``g`` in penman notation, children in annotation (L2R) order.

    With ``indent=None`` the graph is written on one line.
    """
    out: list[str] = []
    depth = 0
    pending_role: str | None = None

    def sep():
        if indent is None:
            return " "
        return "\n" + " " * (indent * depth)

    for ev in traverse(g):
        kind = ev[0]
        if kind == "open":
            prefix = "" if pending_role is None else f"{sep()}:{pending_role} "
            out.append(f"{prefix}({ev[1]} / {g.concept(ev[1])}")
            pending_role = None
            depth += 1
        elif kind == "role":
            item = ev[1]
            pending_role = item.role if isinstance(item, Attribute) else item.surface_role
        elif kind == "ref":
            out.append(f"{sep()}:{pending_role} {ev[1]}")
            pending_role = None
        elif kind == "const":
            out.append(f"{sep()}:{pending_role} {ev[1].value}")
            pending_role = None
        else:
            out.append(")")
            depth -= 1
    return "".join(out)


# --------------------------------------------------------------------------
# Smatch triple view


class TripleKind(enum.Enum):
    INSTANCE = "instance"
    RELATION = "relation"
    ATTRIBUTE = "attribute"


@dataclass(frozen=True)
class Triple:
    kind: TripleKind
    a: str
    role: str
    b: str


@dataclass(frozen=True)
class TripleSet:
    variables: tuple[str, ...]
    instances: tuple[Triple, ...]
    relations: tuple[Triple, ...]
    attributes: tuple[Triple, ...]

    def __iter__(self):
        yield from self.instances
        yield from self.relations
        yield from self.attributes

    def __len__(self):
        return len(self.instances) + len(self.relations) + len(self.attributes)

    @classmethod
    def empty(cls) -> "TripleSet":
        return cls((), (), (), ())

    @classmethod
    def from_triples(cls, triples: Iterable[Triple], variables: Sequence[str] | None = None):
        ts = list(dict.fromkeys(triples))
        inst = tuple(t for t in ts if t.kind is TripleKind.INSTANCE)
        if variables is None:
            variables = [t.a for t in inst]
        return cls(
            tuple(variables),
            inst,
            tuple(t for t in ts if t.kind is TripleKind.RELATION),
            tuple(t for t in ts if t.kind is TripleKind.ATTRIBUTE),
        )


def to_triples(g: AmrGraph | None) -> TripleSet:
    """Instance, relation and attribute triples plus the TOP triple on the root.

    ``None`` (a failed parse) maps to the empty set.
    """
    if g is None:
        return TripleSet.empty()
    inst = tuple(Triple(TripleKind.INSTANCE, v, "instance", c) for v, c in g.nodes)
    rel = tuple(Triple(TripleKind.RELATION, e.src, e.role, e.dst) for e in g.edges)
    att = (Triple(TripleKind.ATTRIBUTE, g.root, TOP_ROLE, TOP_VALUE),) + tuple(
        Triple(TripleKind.ATTRIBUTE, a.src, a.role, a.value) for a in g.attributes
    )
    return TripleSet(tuple(g.variables), inst, rel, att)
