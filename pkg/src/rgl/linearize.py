"""Graph linearization in left-to-right and right-to-left DFS order.

A node introduction is written ``( <Rk> concept``; later mentions of the same
node are the bare pointer ``<Rk>``.  Pointer indices are assigned in
visitation order, so the R2L sequence is renumbered independently of L2R.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .amr_graph import AmrError, AmrGraph, Attribute, Edge, canonical_role, traverse

__all__ = [
    "Order",
    "TokenKind",
    "Token",
    "TokenSeq",
    "Unrecoverable",
    "UNKNOWN_CONCEPT",
    "linearize",
    "linearize_with_positions",
    "delinearize",
    "reverse_tokens",
    "tokens_from_text",
    "read_token_tsv",
    "write_token_tsv",
]

UNKNOWN_CONCEPT = "amr-unknown"
_POINTER_RE = re.compile(r"^<R(\d+)>$")


class Order(enum.Enum):
    L2R = "L2R"
    R2L = "R2L"
    REVERSED = "REVERSED"

    @classmethod
    def parse(cls, text: str) -> "Order":
        return cls(text.strip().upper())


class TokenKind(enum.Enum):
    OPEN = "open"
    CLOSE = "close"
    POINTER = "pointer"
    CONCEPT = "concept"
    ROLE = "role"
    CONSTANT = "constant"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    value: str | int | None = None

    def __str__(self):
        k = self.kind
        if k is TokenKind.OPEN:
            return "("
        if k is TokenKind.CLOSE:
            return ")"
        if k is TokenKind.POINTER:
            return f"<R{self.value}>"
        if k is TokenKind.ROLE:
            return f":{self.value}"
        return str(self.value)

    @property
    def is_atom(self) -> bool:
        return self.kind in (TokenKind.CONCEPT, TokenKind.CONSTANT)


OPEN = Token(TokenKind.OPEN)
CLOSE = Token(TokenKind.CLOSE)


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[Token, ...]
    order: Order
    # order of the sequence this one was reversed from
    base_order: Order | None = field(default=None)

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def text(self) -> str:
        return " ".join(str(t) for t in self.tokens)

    def strings(self) -> list[str]:
        return [str(t) for t in self.tokens]

    @classmethod
    def from_strings(cls, toks: Sequence[str], order: Order = Order.L2R) -> "TokenSeq":
        return cls(tokens_from_text(toks), order)


class Unrecoverable(AmrError):
    """Token sequence is empty after repair; score it as a zero-triple graph."""


def tokens_from_text(text: str | Sequence[str]) -> tuple[Token, ...]:
    """Classify space-separated token strings; atoms are typed by context."""
    parts = text.split() if isinstance(text, str) else list(text)
    out: list[Token] = []
    for s in parts:
        m = _POINTER_RE.match(s)
        if s == "(":
            out.append(OPEN)
        elif s == ")":
            out.append(CLOSE)
        elif m:
            out.append(Token(TokenKind.POINTER, int(m.group(1))))
        elif s.startswith(":") and len(s) > 1:
            out.append(Token(TokenKind.ROLE, s[1:]))
        else:
            prev = out[-1] if out else None
            if prev is not None and prev.kind is TokenKind.ROLE:
                out.append(Token(TokenKind.CONSTANT, s))
            else:
                out.append(Token(TokenKind.CONCEPT, s))
    return tuple(out)


def linearize_with_positions(g: AmrGraph, order: Order | str = Order.L2R):
    """Linearize and report token positions.

    Returns ``(seq, node_pos, edge_pos)`` where ``node_pos[var]`` is the index
    of the node's Concept token and ``edge_pos[(src, role, dst)]`` the index
    of the edge's Role token.
    """
    order = Order.parse(order) if isinstance(order, str) else order
    if order is Order.REVERSED:
        raise ValueError("use reverse_tokens() for the reversed-token baseline")
    toks: list[Token] = []
    pointer: dict[str, int] = {}
    node_pos: dict[str, int] = {}
    edge_pos: dict[tuple[str, str, str], int] = {}
    for ev in traverse(g, reverse=order is Order.R2L):
        kind = ev[0]
        if kind == "open":
            var = ev[1]
            pointer[var] = len(pointer)
            toks += [OPEN, Token(TokenKind.POINTER, pointer[var])]
            node_pos[var] = len(toks)
            toks.append(Token(TokenKind.CONCEPT, g.concept(var)))
        elif kind == "role":
            item = ev[1]
            if isinstance(item, Edge):
                edge_pos[(item.src, item.role, item.dst)] = len(toks)
                toks.append(Token(TokenKind.ROLE, item.surface_role))
            else:
                toks.append(Token(TokenKind.ROLE, item.role))
        elif kind == "ref":
            toks.append(Token(TokenKind.POINTER, pointer[ev[1]]))
        elif kind == "const":
            toks.append(Token(TokenKind.CONSTANT, ev[1].value))
        else:
            toks.append(CLOSE)
    return TokenSeq(tuple(toks), order), node_pos, edge_pos


def linearize(g: AmrGraph, order: Order | str = Order.L2R) -> TokenSeq:
    return linearize_with_positions(g, order)[0]


def reverse_tokens(t: TokenSeq) -> TokenSeq:
    """Naive baseline: the whole token sequence read backwards."""
    toks = tuple(reversed(t.tokens))
    if t.order is Order.REVERSED:
        return TokenSeq(toks, t.base_order or Order.L2R)
    return TokenSeq(toks, Order.REVERSED, base_order=t.order)


def delinearize(t: TokenSeq | Sequence[Token] | str) -> AmrGraph:
    """Restore a graph from a (possibly noisy) token sequence.

    Repair rules, applied deterministically:

    1. a Role with no following target is dropped;
    2. Opens still unbalanced at the end are closed;
    3. tokens before the first Open or after the root closes are dropped, as
       are atoms or pointers that follow no Role, and subtrees that end up
       disconnected from the root;
    4. a Pointer reference never introduced becomes a fresh node with concept
       ``amr-unknown``.

    Additionally an Open without a concept gets ``amr-unknown``, a pointer
    introduced twice creates a second node, and duplicate or cycle-closing
    edges are dropped.  Raises :class:`Unrecoverable` when nothing survives.
    """
    if isinstance(t, str):
        toks = tokens_from_text(t)
    elif isinstance(t, TokenSeq):
        toks = t.tokens
    else:
        toks = tuple(t)
    return _Restorer(toks).run()


class _Restorer:
    def __init__(self, toks: Sequence[Token]):
        self.toks = toks
        self.i = 0
        self.nodes: list[tuple[str, str]] = []
        self.ptr_var: dict[int, str] = {}
        # (src_var, role, target, kind, seq) where kind in {"node", "ptr", "const"}
        self.items: list[tuple] = []
        self.seq = 0

    def _fresh(self, concept: str) -> str:
        var = f"v{len(self.nodes)}"
        self.nodes.append((var, concept))
        return var

    def _peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def run(self) -> AmrGraph:
        while self.i < len(self.toks) and self.toks[self.i].kind is not TokenKind.OPEN:
            self.i += 1
        if self.i >= len(self.toks):
            raise Unrecoverable("no node in token sequence")
        root = self._node()
        return self._assemble(root)

    def _node(self) -> str:
        self.i += 1  # Open
        tok = self._peek()
        ptr = None
        if tok is not None and tok.kind is TokenKind.POINTER:
            ptr = tok.value
            self.i += 1
            tok = self._peek()
        if tok is not None and tok.is_atom:
            concept = str(tok.value)
            self.i += 1
        else:
            concept = UNKNOWN_CONCEPT
        var = self._fresh(concept)
        if ptr is not None and ptr not in self.ptr_var:
            self.ptr_var[ptr] = var
        while True:
            tok = self._peek()
            if tok is None:
                return var
            if tok.kind is TokenKind.CLOSE:
                self.i += 1
                return var
            if tok.kind is not TokenKind.ROLE:
                if tok.kind is TokenKind.OPEN:
                    # subtree without a role: parsed, then pruned as orphan
                    self._node()
                else:
                    self.i += 1
                continue
            role = str(tok.value)
            self.i += 1
            nxt = self._peek()
            if nxt is None or nxt.kind in (TokenKind.ROLE, TokenKind.CLOSE):
                continue
            seq, self.seq = self.seq, self.seq + 1
            if nxt.kind is TokenKind.OPEN:
                child = self._node()
                self.items.append((var, role, child, "node", seq))
            elif nxt.kind is TokenKind.POINTER:
                self.i += 1
                self.items.append((var, role, nxt.value, "ptr", seq))
            else:
                self.i += 1
                self.items.append((var, role, str(nxt.value), "const", seq))

    def _assemble(self, root: str) -> AmrGraph:
        edges: list[Edge] = []
        attrs: list[Attribute] = []
        # pre-order, so a tree edge wins over a later edge that would close a cycle
        for var, role, target, kind, seq in sorted(self.items, key=lambda it: it[4]):
            if kind == "const":
                attrs.append(Attribute(var, role, target, seq))
                continue
            if kind == "ptr":
                if target not in self.ptr_var:
                    self.ptr_var[target] = self._fresh(UNKNOWN_CONCEPT)
                target = self.ptr_var[target]
            crole, inv = canonical_role(role)
            if not crole:
                continue
            if inv:
                edges.append(Edge(target, crole, var, True, seq))
            else:
                edges.append(Edge(var, crole, target, False, seq))

        kept = _acyclic_unique(edges)
        reach = _reachable(root, kept)
        nodes = [(v, c) for v, c in self.nodes if v in reach]
        kept = [e for e in kept if e.src in reach and e.dst in reach]
        seen_attr = set()
        final_attrs = []
        for a in attrs:
            key = (a.src, a.role, a.value)
            if a.src in reach and key not in seen_attr:
                seen_attr.add(key)
                final_attrs.append(a)
        if not nodes:
            raise Unrecoverable("empty after repair")
        try:
            return AmrGraph(nodes, kept, final_attrs, root)
        except AmrError as exc:  # pragma: no cover - repair should prevent this
            raise Unrecoverable(str(exc)) from exc


def _acyclic_unique(edges: list[Edge]) -> list[Edge]:
    out: list[Edge] = []
    keys = set()
    succ: dict[str, set[str]] = {}
    for e in edges:
        key = (e.src, e.role, e.dst)
        if e.src == e.dst or key in keys:
            continue
        # adding src->dst closes a cycle iff src is reachable from dst
        stack, seen, cyclic = [e.dst], {e.dst}, False
        while stack:
            v = stack.pop()
            if v == e.src:
                cyclic = True
                break
            for w in succ.get(v, ()):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if cyclic:
            continue
        keys.add(key)
        succ.setdefault(e.src, set()).add(e.dst)
        out.append(e)
    return out


def _reachable(root: str, edges: list[Edge]) -> set[str]:
    # follow edges only in their written direction so the root's subtree is kept
    adj: dict[str, list[str]] = {}
    for e in edges:
        adj.setdefault(e.parent, []).append(e.child)
    seen = {root}
    stack = [root]
    while stack:
        for w in adj.get(stack.pop(), ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


# --------------------------------------------------------------------------
# dataset files: TSV of id, order, tokens


def write_token_tsv(path: str | Path, rows: Iterable[tuple[str, TokenSeq]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex_id, seq in rows:
            fh.write(f"{ex_id}\t{seq.order.value}\t{seq.text()}\n")


def read_token_tsv(path: str | Path) -> list[tuple[str, TokenSeq]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            ex_id, order, text = (line.split("\t") + ["", ""])[:3]
            rows.append((ex_id, TokenSeq(tokens_from_text(text), Order.parse(order))))
    return rows
