"""Desk-scale structure-loss experiment: baseline vs RGL on the synthetic corpus.

One seed runs the whole recipe: generate and split the corpus, train a weak
R2L parser on 30% of train, decode silver R2L sequences for all of train,
train the full R2L parser, the RGL model and a plain baseline, parse the
test split with both systems, then report relation F1 against position,
its Pearson coefficient and the gate-vs-position histogram.
"""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .amr_graph import serialize_penman
from .analysis import GateHistogram, PositionalCurve, curve_csv, curve_pearson, gate_histogram, positional_f1
from .corpus import GenSpec, generate, split, write_corpus, write_manifest
from .inference import BeamConfig, parse_baseline, parse_pipeline, write_gate_tsv
from .linearize import Order, TokenSeq, Unrecoverable, delinearize
from .smatch import SmatchScore, corpus_smatch
from .training import (
    TrainConfig,
    build_vocab,
    encode_pairs,
    generate_silver,
    silver_ids,
    train_rgl,
    train_seq2seq,
    train_weak_r2l,
)

__all__ = ["ExperimentConfig", "SeedResult", "run_seed", "run_experiment", "summary_tsv"]


@dataclass
class ExperimentConfig:
    n_examples: int = 2000
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    weak_fraction: float = 0.3
    weak_steps: int = 400
    r2l_steps: int = 800
    baseline_steps: int = 800
    rgl_steps: int = 800
    batch: int = 8
    lr: float = 1e-3
    warmup: int = 50
    beam: int = 5
    max_decode: int = 200
    eval_limit: int | None = None  # parse only the first N test items
    bucket_width: int = 10
    gate_bucket_width: int = 50

    def train_config(self, steps: int, seed: int) -> TrainConfig:
        return TrainConfig(total_steps=steps, batch=self.batch, lr=self.lr, warmup=self.warmup, seed=seed)


@dataclass
class SeedResult:
    seed: int
    baseline_smatch: SmatchScore
    rgl_smatch: SmatchScore
    baseline_curve: PositionalCurve
    rgl_curve: PositionalCurve
    baseline_pearson: float | None
    rgl_pearson: float | None
    gates: GateHistogram
    silver_ok: float
    weak_r2l_smatch: SmatchScore
    full_r2l_smatch: SmatchScore
    seconds: float
    fingerprint: str
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def direction_holds(self) -> bool | None:
        """RGL's Pearson less negative than the baseline's."""
        if self.baseline_pearson is None or self.rgl_pearson is None:
            return None
        return self.rgl_pearson > self.baseline_pearson


def _r2l_graph(tokens: TokenSeq):
    try:
        return delinearize(tokens)
    except Unrecoverable:
        return None


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: str | Path | None = None,
             log: Callable[[str], None] | None = None) -> SeedResult:
    say = log or (lambda msg: None)
    t_start = time.perf_counter()
    timings: dict[str, float] = {}
    clock = [time.perf_counter()]

    def lap(name):
        now = time.perf_counter()
        timings[name] = now - clock[0]
        clock[0] = now
        say(f"seed {seed}: {name} {timings[name]:.1f}s")

    corpus = generate(replace(GenSpec(), n_examples=cfg.n_examples, seed=seed))
    train, _dev, test = split(corpus, cfg.ratios, seed)
    if cfg.eval_limit is not None:
        test = test[: cfg.eval_limit]
    vocab = build_vocab(train)
    pairs = encode_pairs(vocab, train)
    beam = BeamConfig(cfg.beam, cfg.max_decode)
    lap("data")

    weak, _ = train_weak_r2l(pairs, vocab, cfg.train_config(cfg.weak_steps, seed), cfg.weak_fraction, seed)
    lap("weak-r2l")
    silver = generate_silver(weak.model, train, beam)
    lap("silver")
    r2l = train_seq2seq(pairs, vocab, cfg.train_config(cfg.r2l_steps, seed), target="r2l")
    lap("r2l")
    rgl = train_rgl(pairs, silver_ids(vocab, silver), vocab, cfg.train_config(cfg.rgl_steps, seed))
    lap("rgl")
    base = train_seq2seq(pairs, vocab, cfg.train_config(cfg.baseline_steps, seed), target="l2r")
    lap("baseline")

    rgl_out = [parse_pipeline(ex.sentence, r2l.model, rgl.model, beam, trace=True, example_id=ex.id) for ex in test]
    base_out = [parse_baseline(ex.sentence, base.model, beam, ex.id) for ex in test]
    weak_test = [_r2l_graph(it.tokens) for it in generate_silver(weak.model, test, beam)]
    lap("inference")

    golds = [ex.graph for ex in test]
    rgl_graphs = [r.graph for r in rgl_out]
    base_graphs = [r.graph for r in base_out]
    full_r2l = [_r2l_graph(r.silver) for r in rgl_out]
    rgl_curve = positional_f1(rgl_graphs, golds, "relation", cfg.bucket_width)
    base_curve = positional_f1(base_graphs, golds, "relation", cfg.bucket_width)
    records = [g for r in rgl_out for g in r.gates]
    gates = gate_histogram(records, cfg.gate_bucket_width)
    result = SeedResult(
        seed=seed,
        baseline_smatch=corpus_smatch(base_graphs, golds),
        rgl_smatch=corpus_smatch(rgl_graphs, golds),
        baseline_curve=base_curve,
        rgl_curve=rgl_curve,
        baseline_pearson=curve_pearson(base_curve),
        rgl_pearson=curve_pearson(rgl_curve),
        gates=gates,
        silver_ok=float(np.mean([s.ok for s in silver])),
        weak_r2l_smatch=corpus_smatch(weak_test, golds),
        full_r2l_smatch=corpus_smatch(full_r2l, golds),
        seconds=0.0,
        fingerprint=_fingerprint(silver, rgl_out, base_out),
    )
    lap("analysis")
    result.seconds = time.perf_counter() - t_start
    result.timings = timings
    if out_dir is not None:
        _write_outputs(Path(out_dir) / f"seed{seed}", result, train, test, rgl_out, base_out, records)
    return result


def _fingerprint(silver, rgl_out, base_out) -> str:
    h = hashlib.sha256()
    for it in silver:
        h.update(f"{it.id}\t{it.tokens.text()}\t{it.ok}\n".encode())
    for r in list(rgl_out) + list(base_out):
        h.update(f"{r.id}\t{r.tokens.text()}\n".encode())
        for g in r.gates:
            h.update(f"{g.position},{g.layer},{g.g!r}\n".encode())
    return h.hexdigest()


def _write_outputs(d: Path, res: SeedResult, train, test, rgl_out, base_out, records) -> None:
    d.mkdir(parents=True, exist_ok=True)
    write_manifest(d / "manifest.tsv", {"train": train, "test": test})
    write_corpus(d / "test.gold.amr", test)
    for name, outs in (("rgl", rgl_out), ("baseline", base_out)):
        with open(d / f"test.{name}.amr", "w", encoding="utf-8") as fh:
            for r in outs:
                body = serialize_penman(r.graph) if r.graph is not None else "(v0 / amr-empty)"
                fh.write(f"# ::id {r.id}\n{body}\n\n")
    (d / "relation_f1.baseline.csv").write_text(curve_csv(res.baseline_curve, res.baseline_pearson), encoding="utf-8")
    (d / "relation_f1.rgl.csv").write_text(curve_csv(res.rgl_curve, res.rgl_pearson), encoding="utf-8")
    (d / "gates.csv").write_text(curve_csv(res.gates.curve, res.gates.pearson, res.gates.global_mean), encoding="utf-8")
    write_gate_tsv(d / "gates.tsv", records)
    (d / "summary.tsv").write_text(summary_tsv([res]), encoding="utf-8")


def _fmt(x: float | None) -> str:
    return "nan" if x is None else f"{x:.4f}"


def summary_tsv(results: Sequence[SeedResult]) -> str:
    cols = ["seed", "baseline_smatch", "rgl_smatch", "baseline_pearson", "rgl_pearson", "direction_holds",
            "gate_mean", "silver_ok", "weak_r2l_smatch", "full_r2l_smatch", "seconds"]
    lines = ["\t".join(cols)]
    for r in results:
        lines.append("\t".join([
            str(r.seed),
            _fmt(r.baseline_smatch.f1),
            _fmt(r.rgl_smatch.f1),
            _fmt(r.baseline_pearson),
            _fmt(r.rgl_pearson),
            str(r.direction_holds),
            _fmt(r.gates.global_mean),
            _fmt(r.silver_ok),
            _fmt(r.weak_r2l_smatch.f1),
            _fmt(r.full_r2l_smatch.f1),
            f"{r.seconds:.1f}",
        ]))
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, seeds: Sequence[int] = (0, 1, 2), out_dir: str | Path | None = None,
                   log: Callable[[str], None] | None = None) -> list[SeedResult]:
    results = [run_seed(cfg, s, out_dir, log) for s in seeds]
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "summary.tsv").write_text(summary_tsv(results), encoding="utf-8")
    return results
