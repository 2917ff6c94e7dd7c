import math
import random

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from rgl.amr_graph import AmrGraph, parse_penman
from rgl.analysis import (
    ConstantSeries,
    CurveKind,
    GateRecord,
    LengthMismatch,
    MisalignedCorpora,
    curve_csv,
    curve_pearson,
    gate_histogram,
    pearson,
    positional_f1,
    positionwise_accuracy,
)
from rgl.linearize import linearize_with_positions

from oracles import pearson as pearson_oracle


def drop_last_node(g: AmrGraph) -> AmrGraph:
    """Remove the node introduced last in the L2R sequence (a leaf)."""
    _, node_pos, _ = linearize_with_positions(g, "L2R")
    last = max(node_pos, key=node_pos.get)
    assert last != g.root
    return AmrGraph(
        [(v, c) for v, c in g.nodes if v != last],
        [e for e in g.edges if last not in (e.src, e.dst)],
        [a for a in g.attributes if a.src != last],
        g.root,
    )


@pytest.fixture
def tree_corpus(synthetic_1000):
    return [e.graph for e in synthetic_1000[:150] if not e.graph.reentrant_nodes() and len(e.graph.nodes) > 2][:40]


def test_identical_corpora_score_one(tree_corpus):
    for kind in ("node", "relation"):
        curve = positional_f1(tree_corpus, tree_corpus, kind, 10)
        assert all(b.value == 1.0 for b in curve.buckets if b.support)


def test_missing_last_node_drops_last_bucket():
    gold = parse_penman("(a / alpha :ARG0 (b / beta) :ARG1 (c / gamma) :ARG2 (d / delta))")
    pred = drop_last_node(gold)
    # gold L2R: ( <R0> alpha :ARG0 ( <R1> beta ) :ARG1 ( <R2> gamma ) :ARG2 ( <R3> delta ) )
    # node concepts sit at 2, 6, 11, 16; pred drops the one at 16
    curve = positional_f1([pred], [gold], "node", bucket_width=8)
    assert [(b.start, b.end) for b in curve.buckets] == [(0, 8), (8, 16), (16, 17)]
    assert curve.buckets[0].value == 1.0
    assert curve.buckets[-1].value == 0.0
    assert curve.buckets[-1].value < curve.buckets[0].value


def test_single_bucket_matches_counted_f1(tree_corpus):
    preds = [drop_last_node(g) for g in tree_corpus]
    # by construction every remaining node and relation is matched
    n_gold = sum(len(g.nodes) for g in tree_corpus)
    n_pred = n_gold - len(tree_corpus)
    r_gold = sum(len(g.edges) for g in tree_corpus)
    r_pred = r_gold - len(tree_corpus)
    for kind, (p_tot, g_tot) in (("node", (n_pred, n_gold)), ("relation", (r_pred, r_gold))):
        curve = positional_f1(preds, tree_corpus, kind, bucket_width=10_000)
        assert len(curve) == 1
        prec, rec = 1.0, p_tot / g_tot
        assert curve.buckets[0].value == pytest.approx(2 * prec * rec / (prec + rec), abs=1e-12)
        assert curve.buckets[0].support == p_tot + g_tot


def test_curves_ignore_example_order(tree_corpus):
    preds = [drop_last_node(g) for g in tree_corpus]
    idx = list(range(len(preds)))
    random.Random(4).shuffle(idx)
    a = positional_f1(preds, tree_corpus, "relation", 5)
    b = positional_f1([preds[i] for i in idx], [tree_corpus[i] for i in idx], "relation", 5)
    assert a == b


def test_buckets_partition_positions(tree_corpus):
    curve = positional_f1(tree_corpus, tree_corpus, "node", 7)
    for prev, nxt in zip(curve.buckets, curve.buckets[1:]):
        assert prev.end == nxt.start
    assert curve.buckets[0].start == 0
    assert sum(b.support for b in curve.buckets) == 2 * sum(len(g.nodes) for g in tree_corpus)


def test_keyed_corpora_and_misalignment(g1):
    assert positional_f1({"a": g1}, {"a": g1}).buckets
    with pytest.raises(MisalignedCorpora):
        positional_f1({"a": g1}, {"b": g1})
    with pytest.raises(MisalignedCorpora):
        positional_f1([g1], [g1, g1])
    with pytest.raises(ValueError):
        positional_f1([g1], [g1], bucket_width=0)


def test_failed_parse_counts_against_recall(g1):
    curve = positional_f1([None], [g1], "node", 100)
    assert curve.buckets[0].value == 0.0
    assert curve.buckets[0].support == len(g1.nodes)


def test_positionwise_identical():
    seqs = [list("abcdefghij"), list("abc")]
    curve = positionwise_accuracy(seqs, seqs, 5)
    assert curve.kind is CurveKind.TOKEN_ACCURACY
    assert curve.values() == [1.0, 1.0]


def test_positionwise_first_position_wrong():
    gold = [list("abcdefghij")]
    pred = [list("Xbcdefghij")]
    curve = positionwise_accuracy(pred, gold, 5)
    # 4 of the 5 positions in [0, 5) match
    assert curve.values() == [pytest.approx(0.8), 1.0]
    assert [b.support for b in curve.buckets] == [5, 5]


def test_positionwise_short_prediction_and_empty():
    curve = positionwise_accuracy([["a"]], [["a", "b", "c", "d"]], 2)
    assert curve.values() == [0.5, 0.0]
    assert positionwise_accuracy([], [], 5).buckets == ()


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)
    assert pearson([1, 2, 3], [6, 4, 2]) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ConstantSeries):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        pearson([1, 2], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        pearson([1], [1])


@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=20, unique=True),
    st.floats(0.1, 10),
    st.floats(-10, 10),
    st.booleans(),
)
def test_pearson_affine(xs, a, b, flip):
    # the affine image must stay non-constant in float64 (x + 1 == 1 for tiny x)
    assume(max(xs) - min(xs) > 1e-3)
    a = -a if flip else a
    ys = [a * x + b for x in xs]
    assert pearson(xs, ys) == pytest.approx(math.copysign(1.0, a), abs=1e-9)


@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=30))
def test_pearson_matches_oracle(pts):
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    assert pearson(xs, ys) == pytest.approx(pearson_oracle(xs, ys), abs=1e-9)


def test_gate_histogram_constant():
    recs = [GateRecord(p, layer, 0.5) for p in range(230) for layer in range(2)]
    h = gate_histogram(recs)
    assert [(b.start, b.end) for b in h.curve.buckets][:2] == [(0, 50), (50, 100)]
    assert all(b.value == 0.5 for b in h.curve.buckets)
    assert h.global_mean == 0.5
    assert h.pearson is None


def test_gate_histogram_increasing():
    recs = [GateRecord(p, 0, p / 299) for p in range(300)]
    h = gate_histogram(recs, 50)
    vals = h.curve.values()
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert h.pearson > 0
    assert h.global_mean == pytest.approx(0.5)


def test_gate_histogram_empty_and_bounds():
    h = gate_histogram([])
    assert h.curve.buckets == () and h.global_mean is None
    with pytest.raises(ValueError):
        GateRecord(0, 0, 1.5)


def test_curve_pearson_and_csv():
    recs = [GateRecord(p, 0, p / 99) for p in range(100)]
    h = gate_histogram(recs, 10)
    assert curve_pearson(h.curve) == pytest.approx(1.0, abs=1e-9)
    text = curve_csv(h.curve, h.pearson, h.global_mean)
    lines = text.splitlines()
    assert lines[0] == "bucket_start,bucket_end,value,support"
    assert lines[1] == "0,10,0.0455,10"
    assert lines[-1].startswith("# pearson=")
