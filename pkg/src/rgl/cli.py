"""``rgl`` command-line entry point."""
from __future__ import annotations

import argparse
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .amr_graph import AmrError, serialize_penman
from .analysis import (
    GateRecord,
    curve_csv,
    curve_pearson,
    gate_histogram,
    pearson,
    positional_f1,
    positionwise_accuracy,
)
from .corpus import GenSpec, generate, load_corpus, split, write_corpus, write_manifest
from .fixtures import fixture
from .linearize import Order, TokenSeq, delinearize, linearize, read_token_tsv, reverse_tokens, write_token_tsv

NUM = "{:.4f}"


class BadFlag(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


@contextmanager
def _output(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def _sep(args) -> str:
    return "," if args.format == "csv" else "\t"


def _table(args, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    sep = _sep(args)
    fmt = lambda v: NUM.format(v) if isinstance(v, float) else str(v)
    return "\n".join([sep.join(header)] + [sep.join(fmt(v) for v in r) for r in rows]) + "\n"


def _graphs(args):
    """Graphs from --input (penman corpus) or --fixture, as (id, graph) pairs."""
    if getattr(args, "fixture", None):
        return [(args.fixture, fixture(args.fixture))]
    if not args.input:
        raise BadFlag("need --input or --fixture")
    return [(ex.id, ex.graph) for ex in load_corpus(args.input)]


def _token_rows(args) -> list[tuple[str, TokenSeq]]:
    order = Order.parse(args.order) if getattr(args, "order", None) else Order.L2R
    if args.tokens:
        return [("tokens", TokenSeq.from_strings(args.tokens.split(), order))]
    if not args.input:
        raise BadFlag("need --input or --tokens")
    return read_token_tsv(args.input)


def _sentences(args) -> list[tuple[str, tuple[str, ...]]]:
    if args.sentences:
        lines = Path(args.sentences).read_text(encoding="utf-8").splitlines()
        return [(f"s{i}", tuple(l.split())) for i, l in enumerate(lines) if l.strip()]
    if args.corpus:
        return [(ex.id, ex.sentence) for ex in load_corpus(args.corpus)]
    raise BadFlag("need --sentences or --corpus")


def _limit(items, n):
    return items if n is None else items[:n]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_corpus(args):
    spec = GenSpec(
        n_examples=args.n,
        max_depth=args.max_depth,
        max_children=args.max_children,
        concept_vocab_size=args.concepts,
        role_vocab_size=args.roles,
        reentrancy_prob=args.reentrancy,
        seed=args.seed,
    )
    corpus = generate(spec)
    if args.out is None:
        raise BadFlag("gen-corpus needs --out")
    write_corpus(args.out, corpus)
    if args.manifest:
        ratios = tuple(float(r) for r in args.ratios.split(","))
        train, dev, test = split(corpus, ratios, args.seed)
        write_manifest(args.manifest, {"train": train, "dev": dev, "test": test})
    print(f"wrote {len(corpus)} examples to {args.out}", file=sys.stderr)


def cmd_linearize(args):
    order = Order.parse(args.order)
    rows = []
    for ex_id, g in _graphs(args):
        seq = linearize(g, Order.R2L if order is Order.R2L else Order.L2R)
        rows.append((ex_id, reverse_tokens(seq) if order is Order.REVERSED else seq))
    if args.out:
        write_token_tsv(args.out, rows)
    else:
        for _, seq in rows:
            print(seq.text())


def cmd_delinearize(args):
    with _output(args.out) as fh:
        for ex_id, seq in _token_rows(args):
            g = delinearize(seq)
            fh.write(f"# ::id {ex_id}\n{serialize_penman(g)}\n\n")


def cmd_reverse_tokens(args):
    rows = [(ex_id, reverse_tokens(seq)) for ex_id, seq in _token_rows(args)]
    if args.out:
        write_token_tsv(args.out, rows)
    else:
        for _, seq in rows:
            print(seq.text())


def _pred_gold(args):
    from .analysis import MisalignedCorpora

    pred = load_corpus(args.pred)
    gold = load_corpus(args.gold)
    if len(pred) != len(gold):
        raise MisalignedCorpora(f"{len(pred)} predicted vs {len(gold)} gold graphs")
    return [ex.graph for ex in pred], [ex.graph for ex in gold]


def cmd_smatch(args):
    from .smatch import corpus_smatch

    preds, golds = _pred_gold(args)
    s = corpus_smatch(preds, golds, restarts=args.restarts, seed=args.seed)
    with _output(args.out) as fh:
        fh.write(f"P={NUM.format(s.precision)} R={NUM.format(s.recall)} F={NUM.format(s.f1)}\n")


def cmd_fine_grained(args):
    from .smatch import breakdown_tsv, corpus_fine_grained, corpus_smatch

    preds, golds = _pred_gold(args)
    scores = corpus_fine_grained(preds, golds, args.restarts, args.seed)
    text = breakdown_tsv(scores, corpus_smatch(preds, golds, args.restarts, args.seed))
    with _output(args.out) as fh:
        fh.write(text.replace("\t", _sep(args)))


def cmd_analyze_structure_loss(args):
    preds, golds = _pred_gold(args)
    if args.kind == "token":
        pred = [linearize(g).strings() if g is not None else [] for g in preds]
        gold = [linearize(g).strings() for g in golds]
        curve = positionwise_accuracy(pred, gold, args.bucket_width)
    else:
        curve = positional_f1(preds, golds, args.kind, args.bucket_width, seed=args.seed)
    r = curve_pearson(curve)
    supported = [b.value for b in curve.buckets if b.support]
    mean = float(np.mean(supported)) if supported else None
    with _output(args.out) as fh:
        fh.write(curve_csv(curve, r, mean).replace(",", _sep(args)))


def _read_gate_tsv(path) -> list[GateRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        col = {name: i for i, name in enumerate(header)}
        for line in fh:
            if not line.strip():
                continue
            f = line.rstrip("\n").split("\t")
            out.append(GateRecord(int(f[col["position"]]), int(f[col["layer"]]), float(f[col["g"]]), f[col["example_id"]]))
    return out


def cmd_analyze_gates(args):
    hist = gate_histogram(_read_gate_tsv(args.input), args.bucket_width)
    with _output(args.out) as fh:
        fh.write(curve_csv(hist.curve, hist.pearson, hist.global_mean).replace(",", _sep(args)))


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def cmd_pearson(args):
    if args.input:
        rows = [l.replace(",", " ").split() for l in Path(args.input).read_text().splitlines()]
        rows = [r for r in rows if r and not r[0].startswith("#")]
        try:
            xs = [float(r[0]) for r in rows]
        except ValueError:  # header line
            rows = rows[1:]
            xs = [float(r[0]) for r in rows]
        ys = [float(r[1]) for r in rows]
    elif args.xs is not None and args.ys is not None:
        xs, ys = _floats(args.xs), _floats(args.ys)
    else:
        raise BadFlag("need --input or both --xs and --ys")
    print(NUM.format(pearson(xs, ys)))


def cmd_alpha(args):
    from .training import LossSchedule

    k2 = None if args.k2 == "auto" else float(args.k2)
    sched = LossSchedule(args.steps, args.k1, k2)
    if args.at is not None:
        print(NUM.format(sched.alpha(args.at)))
        return
    with _output(args.out) as fh:
        fh.write(_table(args, ["step", "alpha"], [(i, sched.alpha(i)) for i in range(args.steps + 1)]))


def _train_config(args, **extra):
    from .training import TrainConfig

    over = dict(seed=args.seed, total_steps=args.steps, batch=args.batch, lr=args.lr, **extra)
    if args.ablate:
        over["ablate"] = tuple(a for a in args.ablate.split(",") if a)
    if args.config:
        return TrainConfig.load(args.config, **over)
    return TrainConfig(**{k: v for k, v in over.items() if v is not None})


def cmd_train(args):
    from .training import build_vocab, encode_pairs, train_rgl, train_seq2seq, train_weak_r2l

    if not args.corpus:
        raise BadFlag("train needs --corpus")
    if not args.out:
        raise BadFlag("train needs --out (checkpoint path)")
    corpus = load_corpus(args.corpus)
    cfg = _train_config(args)
    vocab = build_vocab(corpus)
    pairs = encode_pairs(vocab, corpus)
    with _output(args.log) if args.log else _null() as log:
        if args.mode == "baseline":
            state = train_seq2seq(pairs, vocab, cfg, "l2r", log)
        elif args.mode == "r2l":
            state = train_seq2seq(pairs, vocab, cfg, "r2l", log)
        elif args.mode == "weak-r2l":
            state, _ = train_weak_r2l(pairs, vocab, cfg, args.fraction, args.seed, log)
        else:
            silver = None
            if args.silver:
                by_id = {i: seq for i, seq in read_token_tsv(args.silver)}
                missing = [ex.id for ex in corpus if ex.id not in by_id]
                if missing:
                    raise BadFlag(f"silver file lacks {len(missing)} ids, e.g. {missing[0]}")
                from .inference import encoder_ids

                silver = [encoder_ids(vocab, by_id[ex.id].strings()) for ex in corpus]
            elif "no-silver" not in cfg.ablate:
                raise BadFlag("rgl training needs --silver (or --ablate no-silver)")
            state = train_rgl(pairs, silver, vocab, cfg, log)
    state.model.save(args.out, {"mode": args.mode, "steps": str(state.step)})
    last = state.history[-1][2]
    print(f"step={state.step} L={NUM.format(last.L)}", file=sys.stderr)


@contextmanager
def _null():
    yield None


def _load_model(path):
    from .model import RGLModel

    return RGLModel.load(path)


def _beam(args):
    from .inference import BeamConfig

    return BeamConfig(args.beam, args.max_decode, args.length_penalty)


def cmd_silver(args):
    from .training import generate_silver

    if not args.out:
        raise BadFlag("silver needs --out")
    items = generate_silver(_load_model(args.parser), load_corpus(args.corpus), _beam(args))
    write_token_tsv(args.out, [(it.id, it.tokens) for it in items])
    print(f"{sum(not it.ok for it in items)} of {len(items)} items failed", file=sys.stderr)


def cmd_infer(args):
    from .inference import parse_baseline, parse_pipeline, write_gate_tsv, write_penman_batch

    model = _load_model(args.model)
    sents = _limit(_sentences(args), args.limit)
    beam = _beam(args)
    if model.config.use_graph:
        if not args.parser:
            raise BadFlag("an RGL model needs --parser (R2L parser checkpoint)")
        parser = _load_model(args.parser)
        results = [parse_pipeline(s, parser, model, beam, trace=bool(args.gates), example_id=i) for i, s in sents]
    else:
        results = [parse_baseline(s, model, beam, i) for i, s in sents]
    if not args.out:
        raise BadFlag("infer needs --out")
    write_penman_batch(args.out, results, [s for _, s in sents])
    if args.gates:
        write_gate_tsv(args.gates, [g for r in results for g in r.gates])


def cmd_grad_check(args):
    from . import numcore as nc
    from .model import ModelConfig, RGLModel
    from .training import Batch, rgl_loss
    from .vocab import Vocab

    rng = np.random.default_rng(args.seed)
    V = 12
    vocab = Vocab([f"t{i}" for i in range(V - 4)])
    cfg = ModelConfig(vocab_size=V, d_model=8, n_heads=2, n_enc_layers=1, n_graph_layers=1, n_dec_layers=1,
                      d_ff=16, seed=args.seed)
    model = RGLModel(cfg, vocab)
    seq = lambda n: [int(t) for t in rng.integers(4, V, size=n)]
    batch = Batch([seq(5), seq(4)], [seq(4), seq(3)], [seq(5), seq(3)], [seq(4), seq(5)])
    a = 0.6
    err = nc.grad_check(lambda: rgl_loss(model, batch, a, detach_teacher=False)[0], model.parameters(),
                        max_coords=args.coords, seed=args.seed)
    print(f"max_rel_error={err:.4e}")
    if err >= 1e-3:
        raise SystemExit(1)


def cmd_bench_latency(args):
    from .inference import bench_latency

    sents = [s for _, s in _limit(_sentences(args), args.limit)]
    rep = bench_latency(sents, _load_model(args.parser), _load_model(args.model), _load_model(args.baseline),
                        _beam(args), args.repeats)
    print(_table(args, ["pipeline_s", "baseline_s", "ratio", "n"],
                 [(rep.pipeline_seconds, rep.baseline_seconds, rep.ratio, rep.n_sentences)]), end="")


def cmd_experiment(args):
    from .experiment import ExperimentConfig, run_experiment, summary_tsv

    cfg = ExperimentConfig()
    if args.config:
        cfg = _experiment_config(cfg, Path(args.config).read_text(encoding="utf-8"))
    if args.eval_limit is not None:
        cfg = replace(cfg, eval_limit=args.eval_limit)
    seeds = [int(s) for s in args.seeds.split(",")]
    res = run_experiment(cfg, seeds, args.out, log=lambda m: print(m, file=sys.stderr))
    sys.stdout.write(summary_tsv(res).replace("\t", _sep(args)))


def _experiment_config(cfg, text: str):
    from dataclasses import fields

    kinds = {f.name: f.type for f in fields(cfg)}
    kw = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        k, _, v = (s.strip() for s in line.partition("="))
        if k not in kinds:
            raise BadFlag(f"unknown experiment setting {k!r}")
        t = kinds[k]
        if t.startswith("tuple"):
            kw[k] = tuple(float(x) for x in v.split(","))
        elif "None" in t:
            kw[k] = None if v.lower() in ("none", "") else int(v)
        else:
            kw[k] = float(v) if t == "float" else int(v)
    return replace(cfg, **kw)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config")
    common.add_argument("--out")
    common.add_argument("--format", choices=("tsv", "csv"), default="tsv")

    p = argparse.ArgumentParser(prog="rgl", description="Reverse graph linearization toolkit")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, fn, help):
        sp = sub.add_parser(name, parents=[common], help=help)
        sp.set_defaults(fn=fn)
        return sp

    s = add("gen-corpus", cmd_gen_corpus, "generate a synthetic sentence/graph corpus")
    d = GenSpec()
    s.add_argument("--n", type=int, default=d.n_examples)
    s.add_argument("--max-depth", type=int, default=d.max_depth)
    s.add_argument("--max-children", type=int, default=d.max_children)
    s.add_argument("--concepts", type=int, default=d.concept_vocab_size)
    s.add_argument("--roles", type=int, default=d.role_vocab_size)
    s.add_argument("--reentrancy", type=float, default=d.reentrancy_prob)
    s.add_argument("--manifest")
    s.add_argument("--ratios", default="0.8,0.1,0.1")

    s = add("linearize", cmd_linearize, "penman graphs to token sequences")
    s.add_argument("--input")
    s.add_argument("--fixture")
    s.add_argument("--order", default="l2r", choices=("l2r", "r2l", "reversed"))

    for name, fn, help in (
        ("delinearize", cmd_delinearize, "token sequences to penman graphs"),
        ("reverse-tokens", cmd_reverse_tokens, "naively reverse token sequences"),
    ):
        s = add(name, fn, help)
        s.add_argument("--input", help="TSV of id, order, tokens")
        s.add_argument("--tokens", help="one space-separated sequence")
        s.add_argument("--order", default="l2r", choices=("l2r", "r2l", "reversed"))

    for name, fn, help in (
        ("smatch", cmd_smatch, "corpus Smatch of predictions against gold"),
        ("fine-grained", cmd_fine_grained, "fine-grained Smatch breakdown"),
        ("analyze-structure-loss", cmd_analyze_structure_loss, "F1 or token accuracy by position"),
    ):
        s = add(name, fn, help)
        s.add_argument("--pred", required=True)
        s.add_argument("--gold", required=True)
        s.add_argument("--restarts", type=int, default=5)
        if name == "analyze-structure-loss":
            s.add_argument("--kind", choices=("node", "relation", "token"), default="relation")
            s.add_argument("--bucket-width", type=int, default=10)

    s = add("analyze-gates", cmd_analyze_gates, "gate value histogram from a gate-trace TSV")
    s.add_argument("--input", required=True)
    s.add_argument("--bucket-width", type=int, default=50)

    s = add("pearson", cmd_pearson, "Pearson correlation of two series")
    s.add_argument("--xs")
    s.add_argument("--ys")
    s.add_argument("--input", help="two-column file")

    s = add("alpha", cmd_alpha, "loss-scheduler weight")
    s.add_argument("--k1", type=float, default=0.8)
    s.add_argument("--k2", default="auto")
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--at", type=int)

    def decoding(sp):
        sp.add_argument("--beam", type=int, default=5)
        sp.add_argument("--max-decode", type=int, default=200)
        sp.add_argument("--length-penalty", type=float, default=1.0)

    s = add("train", cmd_train, "train a model")
    s.add_argument("--mode", choices=("baseline", "rgl", "r2l", "weak-r2l"), required=True)
    s.add_argument("--ablate", help="comma-separated: no-scheduler,no-distill,no-silver,gate-zero")
    s.add_argument("--corpus")
    s.add_argument("--silver", help="silver R2L TSV (rgl mode)")
    s.add_argument("--log", help="metrics TSV path")
    s.add_argument("--steps", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--fraction", type=float, default=0.3)

    s = add("silver", cmd_silver, "decode silver R2L sequences with a parser")
    s.add_argument("--parser", required=True)
    s.add_argument("--corpus", required=True)
    decoding(s)

    s = add("infer", cmd_infer, "parse sentences (two-stage for RGL models)")
    s.add_argument("--model", required=True)
    s.add_argument("--parser")
    s.add_argument("--sentences")
    s.add_argument("--corpus")
    s.add_argument("--gates", help="gate-trace TSV output")
    s.add_argument("--limit", type=int)
    decoding(s)

    s = add("grad-check", cmd_grad_check, "finite-difference check of the RGL loss gradient")
    s.add_argument("--coords", type=int, default=6, help="probed coordinates per parameter")

    s = add("bench-latency", cmd_bench_latency, "two-stage vs one-pass decoding time")
    s.add_argument("--model", required=True)
    s.add_argument("--parser", required=True)
    s.add_argument("--baseline", required=True)
    s.add_argument("--sentences")
    s.add_argument("--corpus")
    s.add_argument("--limit", type=int)
    s.add_argument("--repeats", type=int, default=1)
    decoding(s)

    s = add("experiment", cmd_experiment, "desk-scale baseline vs RGL structure-loss experiment")
    s.add_argument("--seeds", default="0,1,2")
    s.add_argument("--eval-limit", type=int)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except BadFlag as exc:
        print(f"rgl {args.command}: {exc}", file=sys.stderr)
        return 2
    except (AmrError, ValueError, KeyError, OSError) as exc:
        print(f"rgl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
