import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgl.amr_graph import parse_penman
from rgl.corpus import GenSpec, generate
from rgl.smatch import (
    TooLarge,
    best_alignment,
    breakdown_tsv,
    corpus_fine_grained,
    corpus_smatch,
    fine_grained,
    smatch,
    smatch_bruteforce,
)

from oracles import enumerate_smatch

DOG = "(a / dog :ARG0-of (b / bark-01))"
CAT = "(x / cat :ARG0-of (y / bark-01))"


def test_dog_cat_pair():
    s = smatch(parse_penman(DOG), parse_penman(CAT))
    assert (s.matched, s.pred_total, s.gold_total) == (3, 4, 4)
    assert s.f1 == pytest.approx(0.75, abs=1e-12)
    assert enumerate_smatch(parse_penman(DOG), parse_penman(CAT))[0] == 3


def test_single_node_pair():
    s = smatch(parse_penman("(a / dog)"), parse_penman("(b / cat)"))
    assert (s.matched, s.pred_total, s.gold_total) == (1, 2, 2)
    assert s.f1 == pytest.approx(0.5, abs=1e-12)


def test_identical_graphs_score_one(g1):
    assert smatch(g1, g1).f1 == 1.0
    assert smatch_bruteforce(g1, g1).f1 == 1.0


def test_failed_parse_scores_zero(g1):
    s = smatch(None, g1)
    assert s.f1 == 0.0 and s.pred_total == 0 and s.gold_total > 0
    assert smatch(None, None).f1 == 0.0


def test_variable_names_do_not_matter():
    a = parse_penman("(p / pet :mod (q / big) :ARG1-of (r / own-01))")
    b = parse_penman("(zz / pet :ARG1-of (yy / own-01) :mod (xx / big))")
    assert smatch(a, b).f1 == 1.0


def test_bruteforce_too_large():
    big = generate(GenSpec(n_examples=40, seed=3, max_nodes=24))
    g = max((e.graph for e in big), key=lambda g: len(g.nodes))
    assert len(g.nodes) > 8
    with pytest.raises(TooLarge):
        smatch_bruteforce(g, g)


def test_restarts_must_be_positive(g1):
    with pytest.raises(ValueError):
        best_alignment(g1, g1, restarts=0)


def test_alignment_is_injective(synthetic_1000):
    exs = synthetic_1000[:50]
    for p, g in zip(exs, exs[1:]):
        al = best_alignment(p.graph, g.graph)
        images = [v for v in al.mapping.values() if v is not None]
        assert len(images) == len(set(images))
        assert al.score.matched == sum(al.image(t) in set(al.gold) for t in al.pred)


def _small_pairs(n, seed):
    spec = GenSpec(n_examples=2 * n, seed=seed, max_nodes=6, concept_vocab_size=4, role_vocab_size=3,
                   attribute_prob=0.2)
    exs = generate(spec)
    return [(exs[2 * i].graph, exs[2 * i + 1].graph) for i in range(n)]


def test_bruteforce_matches_enumeration_oracle():
    for p, g in _small_pairs(60, 5):
        s = smatch_bruteforce(p, g)
        m, pt, gt, f = enumerate_smatch(p, g)
        assert (s.matched, s.pred_total, s.gold_total) == (m, pt, gt)
        assert s.f1 == f


def test_hill_climbing_equals_bruteforce_on_small_graphs():
    pairs = _small_pairs(200, 17)
    assert all(len(p.nodes) <= 6 and len(g.nodes) <= 6 for p, g in pairs)
    for p, g in pairs:
        assert smatch(p, g).f1 == smatch_bruteforce(p, g).f1


def test_corpus_smatch_sums_counts():
    pairs = _small_pairs(10, 2)
    preds, golds = [p for p, _ in pairs], [g for _, g in pairs]
    total = corpus_smatch(preds, golds)
    parts = [smatch(p, g) for p, g in pairs]
    assert total.matched == sum(s.matched for s in parts)
    assert total.pred_total == sum(s.pred_total for s in parts)
    with pytest.raises(ValueError):
        corpus_smatch(preds, golds[:-1])


def test_duck_sense_only_difference():
    pred = parse_penman("(d / duck-01 :ARG0 (i / i))")
    gold = parse_penman("(d / duck-02 :ARG0 (i / i))")
    fg = fine_grained(pred, gold)
    assert fg.no_wsd.f1 == 1.0
    assert fg.concepts.f1 < 1.0
    assert fg.concepts.f1 == pytest.approx(0.5)


def test_empty_categories_score_one():
    g = parse_penman("(d / dog)")
    fg = fine_grained(g, g)
    assert fg.ner.f1 == fg.negations.f1 == fg.wikification.f1 == fg.reentrancy.f1 == fg.srl.f1 == 1.0


def test_fine_grained_categories():
    gold = parse_penman('(w / want-01 :ARG0 (b / boy :name (n / name :op1 "Tom")) :ARG1 (g / go-02 :ARG0 b) '
                        ':polarity -)')
    pred = parse_penman('(w / want-01 :ARG0 (b / boy :name (n / name :op1 "Tom")) :ARG1 (g / go-02 :ARG0 b))')
    fg = fine_grained(pred, gold)
    assert fg.ner.f1 == 1.0
    assert fg.negations.f1 == 0.0
    assert fg.reentrancy.f1 == 1.0
    assert fg.srl.f1 == 1.0
    assert fg.unlabel.f1 < 1.0 or fg.unlabel.f1 == pytest.approx(smatch(pred, gold).f1, abs=0.2)


def test_corpus_fine_grained_keeps_empty_convention(g1):
    fg = corpus_fine_grained([g1, g1], [g1, g1])
    assert fg.ner.f1 == 1.0 and fg.concepts.f1 == 1.0
    text = breakdown_tsv(fg, smatch(g1, g1))
    assert text.splitlines()[0].startswith("category")
    assert "NoWSD" in text and "Wikification" in text


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_symmetry(seed):
    (p, g), = _small_pairs(1, seed)
    a, b = smatch(p, g), smatch(g, p)
    assert a.f1 == pytest.approx(b.f1, abs=1e-12)
    assert a.precision == pytest.approx(b.recall, abs=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_more_restarts_never_hurt(seed):
    exs = generate(GenSpec(n_examples=2, seed=seed, max_nodes=14, concept_vocab_size=6, role_vocab_size=3))
    p, g = exs[0].graph, exs[1].graph
    scores = [smatch(p, g, restarts=r, seed=0).matched for r in (1, 2, 5, 10)]
    assert scores == sorted(scores)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_score_bounds(seed):
    (p, g), = _small_pairs(1, seed)
    s = smatch(p, g)
    assert 0.0 <= s.f1 <= 1.0
    assert s.matched <= min(s.pred_total, s.gold_total)
    if s.precision + s.recall:
        assert math.isclose(s.f1, 2 * s.precision * s.recall / (s.precision + s.recall))
