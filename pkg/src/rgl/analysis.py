"""Structure-loss diagnostics: positional F1, position-wise accuracy,
Pearson correlation and the gate-vs-position histogram."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .amr_graph import AmrGraph, to_triples
from .linearize import linearize_with_positions
from .smatch import DEFAULT_RESTARTS, best_alignment

__all__ = [
    "CurveKind",
    "Bucket",
    "PositionalCurve",
    "GateRecord",
    "GateHistogram",
    "MisalignedCorpora",
    "ConstantSeries",
    "LengthMismatch",
    "positional_f1",
    "positionwise_accuracy",
    "pearson",
    "curve_pearson",
    "gate_histogram",
    "curve_csv",
]


class MisalignedCorpora(ValueError):
    pass


class ConstantSeries(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class CurveKind(enum.Enum):
    NODE_F1 = "NodeF1"
    RELATION_F1 = "RelationF1"
    TOKEN_ACCURACY = "TokenAccuracy"
    GATE = "Gate"


@dataclass(frozen=True)
class Bucket:
    start: int
    end: int
    value: float
    support: int

    @property
    def midpoint(self) -> float:
        return (self.start + self.end - 1) / 2


@dataclass(frozen=True)
class PositionalCurve:
    kind: CurveKind
    buckets: tuple[Bucket, ...]

    def values(self) -> list[float]:
        return [b.value for b in self.buckets]

    def __len__(self):
        return len(self.buckets)


@dataclass(frozen=True)
class GateRecord:
    position: int
    layer: int
    g: float
    example_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.g <= 1.0:
            raise ValueError(f"gate value {self.g} outside [0, 1]")


@dataclass(frozen=True)
class GateHistogram:
    curve: PositionalCurve
    global_mean: float | None
    pearson: float | None


def _bucketize(width: int, max_len: int) -> list[tuple[int, int]]:
    n = max(1, math.ceil(max_len / width))
    return [(i * width, min((i + 1) * width, max_len)) for i in range(n)]


def _align(pred_corpus, gold_corpus):
    if isinstance(pred_corpus, Mapping) or isinstance(gold_corpus, Mapping):
        if not (isinstance(pred_corpus, Mapping) and isinstance(gold_corpus, Mapping)):
            raise MisalignedCorpora("both corpora must be keyed by id")
        if set(pred_corpus) != set(gold_corpus):
            raise MisalignedCorpora("corpora have different ids")
        keys = sorted(gold_corpus)
        return [(pred_corpus[k], gold_corpus[k]) for k in keys]
    if len(pred_corpus) != len(gold_corpus):
        raise MisalignedCorpora(f"{len(pred_corpus)} predictions vs {len(gold_corpus)} gold graphs")
    return list(zip(pred_corpus, gold_corpus))


def _items(g: AmrGraph | None, kind: str):
    """(key, position) for each node or relation of ``g`` in its own L2R sequence."""
    if g is None:
        return []
    _, node_pos, edge_pos = linearize_with_positions(g, "L2R")
    if kind == "node":
        return [(v, node_pos[v]) for v in g.variables]
    return [((e.src, e.role, e.dst), edge_pos[(e.src, e.role, e.dst)]) for e in g.edges]


def positional_f1(
    pred_corpus,
    gold_corpus,
    kind: str = "node",
    bucket_width: int = 10,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> PositionalCurve:
    """Node or relation F1 as a function of position in the L2R sequence.

    Predicted items sit at the index of their Concept (node) or Role
    (relation) token in the predicted sequence, gold items at their index in
    the gold sequence.  Correctness comes from the best Smatch alignment of
    each pair.  Buckets with no items report 0.0 with support 0.
    """
    kind = kind.lower()
    if kind not in ("node", "relation"):
        raise ValueError("kind must be 'node' or 'relation'")
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    pred_hits: list[tuple[int, bool]] = []
    gold_hits: list[tuple[int, bool]] = []
    for pred, gold in _align(pred_corpus, gold_corpus):
        al = best_alignment(pred, gold, restarts, seed)
        if kind == "node":
            gold_concepts = {t.a: t.b for t in to_triples(gold).instances}
            matched_pred = {
                v for v in (pred.variables if pred is not None else [])
                if v in al.mapping and gold_concepts.get(al.mapping[v]) == pred.concept(v)
            }
            matched_gold = {al.mapping[v] for v in matched_pred}
        else:
            gold_rel = {(e.src, e.role, e.dst) for e in gold.edges} if gold is not None else set()
            matched_pred, matched_gold = set(), set()
            for e in pred.edges if pred is not None else ():
                img = (al.mapping.get(e.src), e.role, al.mapping.get(e.dst))
                if img in gold_rel:
                    matched_pred.add((e.src, e.role, e.dst))
                    matched_gold.add(img)
        pred_hits += [(pos, key in matched_pred) for key, pos in _items(pred, kind)]
        gold_hits += [(pos, key in matched_gold) for key, pos in _items(gold, kind)]

    curve_kind = CurveKind.NODE_F1 if kind == "node" else CurveKind.RELATION_F1
    if not pred_hits and not gold_hits:
        return PositionalCurve(curve_kind, ())
    max_len = 1 + max(p for p, _ in pred_hits + gold_hits)
    buckets = []
    for start, end in _bucketize(bucket_width, max_len):
        p_items = [h for p, h in pred_hits if start <= p < end]
        g_items = [h for p, h in gold_hits if start <= p < end]
        prec = sum(p_items) / len(p_items) if p_items else 0.0
        rec = sum(g_items) / len(g_items) if g_items else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        buckets.append(Bucket(start, end, f1, len(p_items) + len(g_items)))
    return PositionalCurve(curve_kind, tuple(buckets))


def positionwise_accuracy(
    pred_tokens: Sequence[Sequence[str]],
    gold_tokens: Sequence[Sequence[str]],
    bucket_width: int = 10,
) -> PositionalCurve:
    """Exact-match rate per position bucket.

    Positions are counted up to each gold sequence's length; a prediction
    shorter than gold counts as wrong at the missing positions.
    """
    if len(pred_tokens) != len(gold_tokens):
        raise MisalignedCorpora("token corpora differ in length")
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    max_len = max((len(g) for g in gold_tokens), default=0)
    if max_len == 0:
        return PositionalCurve(CurveKind.TOKEN_ACCURACY, ())
    correct = np.zeros(max_len)
    total = np.zeros(max_len)
    for pred, gold in zip(pred_tokens, gold_tokens):
        for i, tok in enumerate(gold):
            total[i] += 1
            correct[i] += i < len(pred) and pred[i] == tok
    buckets = []
    for start, end in _bucketize(bucket_width, max_len):
        n = int(total[start:end].sum())
        buckets.append(Bucket(start, end, float(correct[start:end].sum() / n) if n else 0.0, n))
    return PositionalCurve(CurveKind.TOKEN_ACCURACY, tuple(buckets))


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} vs {len(ys)} values")
    if len(xs) < 2:
        raise LengthMismatch("need at least two points")
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0 or sx < 1e-12 * (np.abs(x).max()) or sy < 1e-12 * (np.abs(y).max()):
        raise ConstantSeries("a series is constant")
    r = float(dx @ dy) / (sx * sy)
    return max(-1.0, min(1.0, r))


def curve_pearson(curve: PositionalCurve) -> float | None:
    """Pearson of bucket values against bucket midpoints (supported buckets only)."""
    pts = [(b.midpoint, b.value) for b in curve.buckets if b.support > 0]
    if len(pts) < 2:
        return None
    try:
        return pearson([p for p, _ in pts], [v for _, v in pts])
    except ConstantSeries:
        return None


def gate_histogram(records: Sequence[GateRecord], bucket_width: int = 50) -> GateHistogram:
    """Mean gate value per position bucket, pooled over layers and examples."""
    if not records:
        return GateHistogram(PositionalCurve(CurveKind.GATE, ()), None, None)
    pos = np.array([r.position for r in records])
    g = np.array([r.g for r in records], dtype=np.float64)
    max_len = int(pos.max()) + 1
    buckets = []
    for start, end in _bucketize(bucket_width, max_len):
        sel = (pos >= start) & (pos < end)
        n = int(sel.sum())
        buckets.append(Bucket(start, end, float(g[sel].mean()) if n else 0.0, n))
    try:
        r = pearson(pos, g)
    except (ConstantSeries, LengthMismatch):
        r = None
    return GateHistogram(PositionalCurve(CurveKind.GATE, tuple(buckets)), float(g.mean()), r)


def curve_csv(curve: PositionalCurve, pearson_r: float | None = None, mean: float | None = None) -> str:
    lines = ["bucket_start,bucket_end,value,support"]
    for b in curve.buckets:
        lines.append(f"{b.start},{b.end},{b.value:.4f},{b.support}")
    fmt = lambda v: "nan" if v is None else f"{v:.4f}"
    lines.append(f"# pearson={fmt(pearson_r)} mean={fmt(mean)}")
    return "\n".join(lines) + "\n"
