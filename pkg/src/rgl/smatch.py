"""Smatch scoring: hill-climbing alignment, an exhaustive oracle and
fine-grained breakdowns.

Every scorer accepts an :class:`AmrGraph`, a :class:`TripleSet` or ``None``
(a failed parse, i.e. zero triples).
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .amr_graph import AmrGraph, Triple, TripleKind, TripleSet, to_triples

__all__ = [
    "SmatchScore",
    "BreakdownScores",
    "Alignment",
    "TooLarge",
    "smatch",
    "smatch_bruteforce",
    "best_alignment",
    "corpus_smatch",
    "fine_grained",
    "corpus_fine_grained",
    "breakdown_tsv",
    "DEFAULT_RESTARTS",
]

DEFAULT_RESTARTS = 5  # 1 concept-seeded start + 4 random starts
KICKS = 6  # perturb-and-reclimb rounds after each start converges
BRUTEFORCE_MAX_VARS = 8
BRUTEFORCE_MAX_MAPPINGS = 5_000_000


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class SmatchScore:
    precision: float
    recall: float
    f1: float
    matched: int
    pred_total: int
    gold_total: int

    @classmethod
    def from_counts(cls, matched: int, pred_total: int, gold_total: int) -> "SmatchScore":
        p = matched / pred_total if pred_total else 0.0
        r = matched / gold_total if gold_total else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f, matched, pred_total, gold_total)

    def __add__(self, other: "SmatchScore") -> "SmatchScore":
        return SmatchScore.from_counts(
            self.matched + other.matched,
            self.pred_total + other.pred_total,
            self.gold_total + other.gold_total,
        )


def _category(matched, pred_total, gold_total) -> SmatchScore:
    """Score with the empty-category convention (both empty -> 1.0)."""
    if pred_total == 0 and gold_total == 0:
        return SmatchScore(1.0, 1.0, 1.0, 0, 0, 0)
    return SmatchScore.from_counts(matched, pred_total, gold_total)


# ---------------------------------------------------------------------------
# alignment problem


def _as_triples(x) -> TripleSet:
    if isinstance(x, TripleSet):
        return x
    return to_triples(x)


@dataclass
class _Problem:
    pred: TripleSet
    gold: TripleSet
    U: np.ndarray
    quads: tuple  # qi, qj, qk, ql, qw

    @property
    def shape(self):
        return self.U.shape


def _build(pred: TripleSet, gold: TripleSet) -> _Problem:
    pv = {v: i for i, v in enumerate(pred.variables)}
    gv = {v: j for j, v in enumerate(gold.variables)}
    U = np.zeros((len(pv), len(gv)), dtype=np.int64)
    gold_unary: dict[tuple[str, str], list[int]] = {}
    for t in gold.instances + gold.attributes:
        if t.a in gv:
            gold_unary.setdefault((t.role, t.b), []).append(gv[t.a])
    for t in pred.instances + pred.attributes:
        if t.a not in pv:
            continue
        for j in gold_unary.get((t.role, t.b), ()):
            U[pv[t.a], j] += 1
    gold_rel: dict[str, list[tuple[int, int]]] = {}
    for t in gold.relations:
        gold_rel.setdefault(t.role, []).append((gv[t.a], gv[t.b]))
    counts: dict[tuple[int, int, int, int], int] = {}
    for t in pred.relations:
        i, k = pv[t.a], pv[t.b]
        for j, l in gold_rel.get(t.role, ()):
            key = (i, j, k, l)
            counts[key] = counts.get(key, 0) + 1
    if counts:
        arr = np.array([k + (w,) for k, w in sorted(counts.items())], dtype=np.int64)
        quads = tuple(np.ascontiguousarray(arr[:, c]) for c in range(5))
    else:
        quads = tuple(np.zeros(0, dtype=np.int64) for _ in range(5))
    return _Problem(pred, gold, U, quads)


def _matched(prob: _Problem, m: np.ndarray) -> int:
    return int(_kernels.score_batch(m[None, :].astype(np.int64), prob.U, *prob.quads)[0])


def _candidates(prob: _Problem) -> list[np.ndarray]:
    P, G = prob.shape
    cand = prob.U > 0
    qi, qj, qk, ql, _ = prob.quads
    cand[qi, qj] = True
    cand[qk, ql] = True
    return [np.nonzero(cand[i])[0] for i in range(P)]


def _smart_init(prob: _Problem) -> np.ndarray:
    P, G = prob.shape
    m = np.full(P, -1, dtype=np.int64)
    used = np.zeros(G, dtype=bool)
    gold_concepts: dict[str, list[int]] = {}
    gidx = {v: j for j, v in enumerate(prob.gold.variables)}
    for t in prob.gold.instances:
        gold_concepts.setdefault(t.b, []).append(gidx[t.a])
    pidx = {v: i for i, v in enumerate(prob.pred.variables)}
    for t in prob.pred.instances:
        i = pidx[t.a]
        for j in gold_concepts.get(t.b, ()):
            if not used[j]:
                m[i] = j
                used[j] = True
                break
    # then any remaining unary agreement (attributes, TOP)
    for i in range(P):
        if m[i] < 0:
            row = np.where(used, 0, prob.U[i])
            if row.max() > 0:
                m[i] = int(np.argmax(row))
                used[m[i]] = True
    return m


def _random_init(prob: _Problem, cands: list[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    P, G = prob.shape
    m = np.full(P, -1, dtype=np.int64)
    used = np.zeros(G, dtype=bool)
    for i in rng.permutation(P):
        free = [j for j in cands[i] if not used[j]]
        if free:
            j = free[int(rng.integers(len(free)))]
            m[i] = j
            used[j] = True
    return m


def _assign(m: np.ndarray, i: int, g: int) -> None:
    # m[i] = g, handing i's old image to g's current owner
    owner = np.nonzero(m == g)[0]
    if owner.size and owner[0] != i:
        m[owner[0]] = m[i]
    m[i] = g


def _pair_move(prob: _Problem, m: np.ndarray) -> tuple[int, np.ndarray | None]:
    """Best move that places both ends of one relation match at once.

    Single reassignments cannot climb out of a plateau where a relation only
    pays once both endpoints move; this scans those joint moves.
    """
    qi, qj, qk, ql, _ = prob.quads
    if qi.shape[0] == 0:
        return 0, None
    maps = np.tile(m, (qi.shape[0], 1))
    for r in range(qi.shape[0]):
        _assign(maps[r], int(qi[r]), int(qj[r]))
        _assign(maps[r], int(qk[r]), int(ql[r]))
    gains = _kernels.score_batch(maps, prob.U, *prob.quads) - _matched(prob, m)
    best = int(np.argmax(gains))
    return int(gains[best]), maps[best]


def _climb(prob: _Problem, m: np.ndarray, bound: int, lookahead: bool = True) -> tuple[np.ndarray, int]:
    m = m.copy()
    score = _matched(prob, m)
    while score < bound:
        gain, i, g = _kernels.best_move(m, prob.U, *prob.quads)
        if gain > 0:
            _assign(m, i, g)
            score += gain
            continue
        gain, moved = _pair_move(prob, m)
        if gain <= 0 and lookahead:
            gain, moved = _kernels.two_step(m, prob.U, *prob.quads)
        if gain <= 0:
            return m, score
        m = moved
        score += gain
    return m, score


def _kick(m: np.ndarray, G: int, rng: np.random.Generator, k: int = 3) -> np.ndarray:
    m = m.copy()
    for i in rng.choice(m.shape[0], size=min(k, m.shape[0]), replace=False):
        _assign(m, int(i), int(rng.integers(G)))
    return m


@dataclass(frozen=True)
class Alignment:
    """Best mapping found between two triple sets."""

    mapping: dict  # pred var -> gold var
    matched: int
    pred: TripleSet
    gold: TripleSet

    @property
    def score(self) -> SmatchScore:
        return SmatchScore.from_counts(self.matched, len(self.pred), len(self.gold))

    def image(self, t: Triple) -> Triple:
        if t.kind is TripleKind.RELATION:
            return Triple(t.kind, self.mapping.get(t.a, ""), t.role, self.mapping.get(t.b, ""))
        return Triple(t.kind, self.mapping.get(t.a, ""), t.role, t.b)


def best_alignment(pred, gold, restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> Alignment:
    """Hill-climb over one-to-one variable mappings.

    The first start maps equal concepts greedily; the remaining
    ``restarts - 1`` starts are random draws from ``seed``'s stream.  Each
    climb takes the best single reassignment while one improves; at a local
    optimum it tries joint moves that place both ends of a relation match,
    then two-move sequences, before giving up.  Each converged start is then
    perturbed ``KICKS`` times (a few random reassignments, then a climb
    without the two-move lookahead), keeping any result at least as good.  Reaching the upper bound
    ``min(|pred|, |gold|)`` ends the search.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    pred_t, gold_t = _as_triples(pred), _as_triples(gold)
    prob = _build(pred_t, gold_t)
    P, G = prob.shape
    if P == 0 or G == 0:
        return Alignment({}, 0, pred_t, gold_t)
    rng = np.random.default_rng(seed)
    cands = _candidates(prob)
    bound = min(len(pred_t), len(gold_t))
    best_m, best = None, -1
    for r in range(restarts):
        start = _smart_init(prob) if r == 0 else _random_init(prob, cands, rng)
        m, score = _climb(prob, start, bound)
        for _ in range(KICKS):
            if score == bound:
                break
            m2, s2 = _climb(prob, _kick(m, G, rng), bound, lookahead=False)
            if s2 >= score:
                m, score = m2, s2
        if score > best:
            best_m, best = m, score
        if best == bound:
            break
    return _alignment(prob, best_m, best)


def _alignment(prob: _Problem, m: np.ndarray, matched: int) -> Alignment:
    pv, gv = prob.pred.variables, prob.gold.variables
    mapping = {pv[i]: gv[j] for i, j in enumerate(m) if j >= 0}
    return Alignment(mapping, matched, prob.pred, prob.gold)


def smatch(pred, gold, restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> SmatchScore:
    return best_alignment(pred, gold, restarts, seed).score


def _injections(P: int, G: int):
    """Yield chunks of every injective pred->gold mapping (partial if P > G)."""
    chunk = 65536
    if P <= G:
        it = itertools.permutations(range(G), P)
        while True:
            block = list(itertools.islice(it, chunk))
            if not block:
                return
            yield np.array(block, dtype=np.int64).reshape(len(block), P)
    else:
        it = itertools.permutations(range(P), G)
        while True:
            block = list(itertools.islice(it, chunk))
            if not block:
                return
            inv = np.array(block, dtype=np.int64)
            maps = np.full((len(block), P), -1, dtype=np.int64)
            rows = np.arange(len(block))[:, None]
            maps[rows, inv] = np.arange(G)[None, :]
            yield maps


def bruteforce_alignment(pred, gold) -> Alignment:
    pred_t, gold_t = _as_triples(pred), _as_triples(gold)
    prob = _build(pred_t, gold_t)
    P, G = prob.shape
    if P == 0 or G == 0:
        return Alignment({}, 0, pred_t, gold_t)
    lo, hi = min(P, G), max(P, G)
    if lo > BRUTEFORCE_MAX_VARS or math.perm(hi, lo) > BRUTEFORCE_MAX_MAPPINGS:
        raise TooLarge(f"{math.perm(hi, lo)} mappings for {P}x{G} variables")
    best_m, best = None, -1
    for maps in _injections(P, G):
        scores = _kernels.score_batch(maps, prob.U, *prob.quads)
        k = int(np.argmax(scores))
        if scores[k] > best:
            best, best_m = int(scores[k]), maps[k].copy()
    return _alignment(prob, best_m, best)


def smatch_bruteforce(pred, gold) -> SmatchScore:
    """Exact optimum by enumerating every injective variable mapping."""
    return bruteforce_alignment(pred, gold).score


def corpus_smatch(preds: Sequence, golds: Sequence, restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> SmatchScore:
    """Micro-averaged Smatch: triple counts summed over all pairs."""
    if len(preds) != len(golds):
        raise ValueError("corpora differ in length")
    total = SmatchScore.from_counts(0, 0, 0)
    for p, g in zip(preds, golds):
        total = total + smatch(p, g, restarts, seed)
    return total


# ---------------------------------------------------------------------------
# fine-grained breakdown

_SENSE_RE = re.compile(r"-\d+$")
_ARG_RE = re.compile(r"^ARG\d+$")


@dataclass(frozen=True)
class BreakdownScores:
    no_wsd: SmatchScore
    concepts: SmatchScore
    ner: SmatchScore
    negations: SmatchScore
    unlabel: SmatchScore
    reentrancy: SmatchScore
    srl: SmatchScore
    wikification: SmatchScore

    def rows(self) -> list[tuple[str, SmatchScore]]:
        names = {
            "no_wsd": "NoWSD",
            "concepts": "Concepts",
            "ner": "NER",
            "negations": "Negations",
            "unlabel": "Unlabel",
            "reentrancy": "Reentrancy",
            "srl": "SRL",
            "wikification": "Wikification",
        }
        return [(names[f.name], getattr(self, f.name)) for f in fields(self)]


def _multiset_score(pred_items: Iterable, gold_items: Iterable) -> SmatchScore:
    from collections import Counter

    p, g = Counter(pred_items), Counter(gold_items)
    matched = sum((p & g).values())
    return _category(matched, sum(p.values()), sum(g.values()))


def _map_triples(ts: TripleSet, fn) -> TripleSet:
    return TripleSet.from_triples((fn(t) for t in ts), ts.variables)


def _concepts(g: AmrGraph | None) -> list[str]:
    return [] if g is None else [c for _, c in g.nodes]


def _named_entities(g: AmrGraph | None) -> list[tuple]:
    if g is None:
        return []
    out = []
    for e in g.edges:
        if e.role != "name":
            continue
        ops = sorted(
            (a.role, a.value) for a in g.attributes if a.src == e.dst and a.role.startswith("op")
        )
        out.append((g.concept(e.src), tuple(v for _, v in ops)))
    return out


def _attr_items(g: AmrGraph | None, role: str) -> list[tuple]:
    if g is None:
        return []
    return [(g.concept(a.src), a.value) for a in g.attributes if a.role == role]


def _subset_score(al: Alignment, keep_pred, keep_gold) -> SmatchScore:
    gold_kept = {t for t in al.gold.relations if keep_gold(t)}
    pred_kept = [t for t in al.pred.relations if keep_pred(t)]
    matched = sum(1 for t in pred_kept if al.image(t) in gold_kept)
    return _category(matched, len(pred_kept), len(gold_kept))


def fine_grained(pred, gold, restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> BreakdownScores:
    """Per-category scores.

    NoWSD and Unlabel re-run Smatch on transformed triples; Concepts, NER,
    Negations and Wikification compare label multisets; Reentrancy and SRL
    count relation triples under the full-graph best alignment.
    """
    pt, gt = to_triples(pred), to_triples(gold)

    def strip_sense(t: Triple) -> Triple:
        if t.kind is TripleKind.INSTANCE:
            return Triple(t.kind, t.a, t.role, _SENSE_RE.sub("", t.b))
        return t

    def unlabel(t: Triple) -> Triple:
        if t.kind is TripleKind.RELATION:
            return Triple(t.kind, t.a, "rel", t.b)
        return t

    no_wsd = smatch(_map_triples(pt, strip_sense), _map_triples(gt, strip_sense), restarts, seed)
    unl = smatch(_map_triples(pt, unlabel), _map_triples(gt, unlabel), restarts, seed)
    al = best_alignment(pt, gt, restarts, seed)

    pred_re = pred.reentrant_nodes() if pred is not None else set()
    gold_re = gold.reentrant_nodes() if gold is not None else set()
    pred_re_edges = _reentrant_edges(pred, pred_re)
    gold_re_edges = _reentrant_edges(gold, gold_re)
    reent = _subset_score(
        al,
        lambda t: (t.a, t.role, t.b) in pred_re_edges,
        lambda t: (t.a, t.role, t.b) in gold_re_edges,
    )
    srl = _subset_score(al, lambda t: bool(_ARG_RE.match(t.role)), lambda t: bool(_ARG_RE.match(t.role)))

    return BreakdownScores(
        no_wsd=no_wsd if len(pt) or len(gt) else _category(0, 0, 0),
        concepts=_multiset_score(_concepts(pred), _concepts(gold)),
        ner=_multiset_score(_named_entities(pred), _named_entities(gold)),
        negations=_multiset_score(_attr_items(pred, "polarity"), _attr_items(gold, "polarity")),
        unlabel=unl,
        reentrancy=reent,
        srl=srl,
        wikification=_multiset_score(_attr_items(pred, "wiki"), _attr_items(gold, "wiki")),
    )


def corpus_fine_grained(preds: Sequence, golds: Sequence, restarts: int = DEFAULT_RESTARTS,
                        seed: int = 0) -> BreakdownScores:
    """Per-category counts summed over a corpus, then scored with the
    empty-category convention."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} gold graphs")
    n = len(fields(BreakdownScores))
    totals = [(0, 0, 0)] * n
    for p, g in zip(preds, golds):
        rows = fine_grained(p, g, restarts, seed).rows()
        totals = [(m + s.matched, a + s.pred_total, b + s.gold_total) for (m, a, b), (_, s) in zip(totals, rows)]
    return BreakdownScores(*[_category(*t) for t in totals])


def _reentrant_edges(g: AmrGraph | None, reentrant: set[str]) -> set[tuple[str, str, str]]:
    if g is None:
        return set()
    return {(e.src, e.role, e.dst) for e in g.edges if e.child in reentrant}


def breakdown_tsv(scores: BreakdownScores, smatch_score: SmatchScore | None = None) -> str:
    lines = ["category\tP\tR\tF\tmatched\tpred_total\tgold_total"]
    rows = scores.rows()
    if smatch_score is not None:
        rows = [("Smatch", smatch_score)] + rows
    for name, s in rows:
        lines.append(
            f"{name}\t{s.precision:.4f}\t{s.recall:.4f}\t{s.f1:.4f}\t{s.matched}\t{s.pred_total}\t{s.gold_total}"
        )
    return "\n".join(lines) + "\n"
