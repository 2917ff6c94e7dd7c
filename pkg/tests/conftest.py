import os

import pytest
from hypothesis import HealthCheck, settings

from rgl.amr_graph import parse_penman
from rgl.corpus import GenSpec, generate
from rgl.fixtures import G1_PENMAN

settings.register_profile(
    "default",
    max_examples=int(os.environ.get("RGL_HYPOTHESIS_EXAMPLES", "60")),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def g1():
    return parse_penman(G1_PENMAN)


@pytest.fixture(scope="session")
def want_boy():
    return parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))")


@pytest.fixture(scope="session")
def synthetic_1000():
    return generate(GenSpec(n_examples=1000, seed=11))


class Overfit:
    """Everything trained once per session on the 64-example toy corpus."""


@pytest.fixture(scope="session")
def overfit():
    import time
    from dataclasses import replace

    from rgl.inference import BeamConfig, parse_baseline, parse_pipeline
    from rgl.training import TrainConfig, build_vocab, encode_pairs, generate_silver, silver_ids, train_rgl, train_seq2seq

    o = Overfit()
    o.examples = generate(GenSpec(n_examples=64, seed=0))
    o.vocab = build_vocab(o.examples)
    o.pairs = encode_pairs(o.vocab, o.examples)
    o.config = TrainConfig(total_steps=500, batch=8, lr=2e-3, warmup=50, d_model=64, seed=0)
    o.beam = BeamConfig(beam_size=5)
    t = {}
    clock = time.perf_counter()
    o.r2l = train_seq2seq(o.pairs, o.vocab, replace(o.config, total_steps=800), target="r2l")
    t["r2l"] = time.perf_counter() - clock
    clock = time.perf_counter()
    o.silver = generate_silver(o.r2l.model, o.examples, o.beam)
    t["silver"] = time.perf_counter() - clock
    clock = time.perf_counter()
    o.rgl = train_rgl(o.pairs, silver_ids(o.vocab, o.silver), o.vocab, o.config)
    t["rgl"] = time.perf_counter() - clock
    clock = time.perf_counter()
    o.parsed = [parse_pipeline(e.sentence, o.r2l.model, o.rgl.model, o.beam, example_id=e.id) for e in o.examples]
    t["pipeline"] = time.perf_counter() - clock
    clock = time.perf_counter()
    o.baseline = train_seq2seq(o.pairs, o.vocab, o.config, target="l2r")
    t["baseline"] = time.perf_counter() - clock
    o.base_parsed = [parse_baseline(e.sentence, o.baseline.model, o.beam, e.id) for e in o.examples]
    o.timings = t
    return o


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
