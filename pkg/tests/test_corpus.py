from collections import defaultdict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgl.amr_graph import serialize_penman
from rgl.corpus import (
    BadRatios,
    CorpusError,
    GenSpec,
    concept_word,
    generate,
    load_corpus,
    parse_corpus,
    read_manifest,
    split,
    write_corpus,
    write_manifest,
)
from rgl.linearize import Order, delinearize, linearize
from rgl.smatch import smatch

TWO_BLOCKS = """# ::id a1
# ::snt the dog barks
(b / bark-01 :ARG0 (d / dog))

# ::id a2
# ::snt cats sleep
(s / sleep-01 :ARG0 (c / cat))
"""


def test_two_blocks(tmp_path):
    p = tmp_path / "c.amr"
    p.write_text(TWO_BLOCKS)
    exs = load_corpus(p)
    assert [e.id for e in exs] == ["a1", "a2"]
    assert exs[0].sentence == ("the", "dog", "barks")


def test_missing_sentence_is_synthesized():
    (ex,) = parse_corpus("# ::id z\n(b / bark-01 :ARG0 (d / dog))\n")
    assert ex.sentence == ("bark1", "dog")
    assert ex.metadata["snt_synthesized"] == "1"


def test_empty_file(tmp_path):
    p = tmp_path / "empty.amr"
    p.write_text("")
    assert load_corpus(p) == []


def test_block_errors_are_aggregated():
    text = TWO_BLOCKS + "\n(x / broken\n\n(y / fine)\n\n(z / z :ARG0 (y / dup) :ARG1 (y / dup))\n"
    with pytest.raises(CorpusError) as info:
        parse_corpus(text)
    assert [i for i, _ in info.value.errors] == [2, 4]
    assert "block 2" in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_corpus(tmp_path / "nope.amr")


def test_concept_word():
    assert concept_word("bala-01") == "bala1"
    assert concept_word("dog") == "dog"


def test_generation_is_deterministic(tmp_path):
    spec = GenSpec(n_examples=50, seed=3)
    a, b = tmp_path / "a.amr", tmp_path / "b.amr"
    write_corpus(a, generate(spec))
    write_corpus(b, generate(spec))
    assert a.read_bytes() == b.read_bytes()
    assert generate(GenSpec(n_examples=50, seed=4)) != generate(spec)


def test_corpus_file_roundtrip(tmp_path):
    exs = generate(GenSpec(n_examples=30, seed=1))
    p = tmp_path / "c.amr"
    write_corpus(p, exs)
    back = load_corpus(p)
    assert [(e.id, e.sentence) for e in back] == [(e.id, e.sentence) for e in exs]
    assert all(serialize_penman(x.graph) == serialize_penman(y.graph) for x, y in zip(back, exs))


def test_zero_reentrancy_gives_trees():
    for ex in generate(GenSpec(n_examples=200, seed=2, reentrancy_prob=0.0)):
        assert not ex.graph.reentrant_nodes()


def test_default_spec_has_reentrancy(synthetic_1000):
    assert sum(bool(e.graph.reentrant_nodes()) for e in synthetic_1000) > 20


def test_spec_limits(synthetic_1000):
    for ex in synthetic_1000:
        g = ex.graph
        assert len(g.nodes) <= GenSpec().max_nodes
        assert all(len([c for c in g.children(v) if hasattr(c, "dst")]) <= 3 for v in g.variables)


def test_bad_spec():
    with pytest.raises(ValueError):
        GenSpec(n_examples=0)
    with pytest.raises(ValueError):
        GenSpec(reentrancy_prob=1.5)


def test_generated_graphs_roundtrip_both_orders(synthetic_1000):
    for ex in synthetic_1000:
        for order in (Order.L2R, Order.R2L):
            assert smatch(delinearize(linearize(ex.graph, order)), ex.graph).f1 == 1.0


def test_verbalization_injective(synthetic_1000):
    by_sentence = defaultdict(list)
    for ex in synthetic_1000:
        by_sentence[ex.sentence].append(ex.graph)
    for graphs in by_sentence.values():
        for other in graphs[1:]:
            assert smatch(graphs[0], other).f1 == 1.0


def test_split_sizes_and_disjointness():
    exs = generate(GenSpec(n_examples=1000, seed=0, max_nodes=4))
    train, dev, test = split(exs, (0.8, 0.1, 0.1), seed=1)
    assert (len(train), len(dev), len(test)) == (800, 100, 100)
    ids = [e.id for part in (train, dev, test) for e in part]
    assert len(set(ids)) == 1000
    assert split(exs, (0.8, 0.1, 0.1), seed=1) == (train, dev, test)
    assert split(exs, (0.8, 0.1, 0.1), seed=2) != (train, dev, test)


@settings(max_examples=30)
@given(st.integers(1, 300), st.floats(0, 1), st.integers(0, 100))
def test_split_partitions(n, r, seed):
    items = list(range(n))
    a, b, c = split(items, (r, (1 - r) / 2, (1 - r) / 2), seed)
    assert sorted(a + b + c) == items


def test_bad_ratios():
    with pytest.raises(BadRatios):
        split([1, 2, 3], (0.5, 0.5, 0.5))
    with pytest.raises(BadRatios):
        split([1, 2, 3], (0.5, 0.5))


def test_manifest_roundtrip(tmp_path):
    exs = generate(GenSpec(n_examples=10, seed=0))
    train, dev, test = split(exs)
    p = tmp_path / "manifest.tsv"
    write_manifest(p, {"train": train, "dev": dev, "test": test})
    m = read_manifest(p)
    assert p.read_text().splitlines()[0] == "id\tsplit"
    assert {m[e.id] for e in train} <= {"train"} and len(m) == 10
