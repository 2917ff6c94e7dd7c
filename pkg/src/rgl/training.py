"""Losses, loss scheduler, optimizer and the training loops.

RGL training runs two teacher-forced passes per step with shared weights:
the teacher reads the gold reverse linearization, the student a silver one
produced by a weaker R2L parser.  The total loss is

    L = alpha_i * CE_T + (1 - alpha_i) * CE_S + KL(teacher || student)

with alpha_i decaying exponentially from 0.8 to 0.2 over training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, TextIO

import numpy as np

from . import numcore as nc
from .corpus import Example
from .inference import BeamConfig, decode_tokens, encoder_ids
from .linearize import Order, TokenSeq, Unrecoverable, delinearize, linearize
from .model import ModelConfig, RGLModel
from .numcore import Tensor
from .vocab import Vocab

__all__ = [
    "OutOfRange",
    "EmptyCorpus",
    "BadConfig",
    "ABLATIONS",
    "ce_loss",
    "kl_loss",
    "LossSchedule",
    "alpha",
    "Adam",
    "TrainConfig",
    "Pair",
    "Batch",
    "StepLosses",
    "TrainState",
    "build_vocab",
    "encode_pairs",
    "rgl_loss",
    "seq2seq_loss",
    "train_step",
    "train_seq2seq",
    "train_rgl",
    "train_weak_r2l",
    "SilverItem",
    "generate_silver",
    "silver_ids",
    "evaluate_ce",
]

ABLATIONS = ("no-scheduler", "no-distill", "no-silver", "gate-zero")


class OutOfRange(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


class BadConfig(ValueError):
    pass


# ---------------------------------------------------------------------------
# losses


def ce_loss(logits, targets, mask=None) -> Tensor:
    """Mean token NLL over positions where ``mask`` is 1 (all when omitted)."""
    return nc.cross_entropy(logits, targets, mask)


def kl_loss(p, q) -> float:
    """sum_v p log(p / q) per position, averaged over positions.

    ``p`` and ``q`` are probability arrays (..., V); zero entries of ``p``
    contribute nothing.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise nc.ShapeMismatch(f"kl: {p.shape} vs {q.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    per_pos = terms.sum(axis=-1)
    return float(np.mean(per_pos))


@dataclass(frozen=True)
class LossSchedule:
    total_steps: int
    k1: float = 0.8
    k2: float | None = None  # None: ln(4) / total_steps, reaching 0.2 at the end
    lower: float = 0.2
    upper: float = 0.8

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.k1 <= 0 or (self.k2 is not None and self.k2 <= 0):
            raise ValueError("k1 and k2 must be positive")

    @property
    def rate(self) -> float:
        return self.k2 if self.k2 is not None else math.log(4.0) / self.total_steps

    def alpha(self, i: int) -> float:
        if not 0 <= i <= self.total_steps:
            raise OutOfRange(f"step {i} outside [0, {self.total_steps}]")
        a = self.k1 * math.exp(-self.rate * i)
        return min(self.upper, max(self.lower, a))


def alpha(i: int, schedule: LossSchedule) -> float:
    return schedule.alpha(i)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with linear warmup and global-norm gradient clipping."""

    def __init__(self, params: Sequence[Tensor], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 warmup: int = 0, clip: float | None = 1.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.warmup = warmup
        self.clip = clip
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def lr_at(self, t: int) -> float:
        if self.warmup and t <= self.warmup:
            return self.lr * t / self.warmup
        return self.lr

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        """Apply one update; returns the pre-clipping gradient norm."""
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
        scale = 1.0
        if self.clip is not None and norm > self.clip:
            scale = self.clip / norm
        self.t += 1
        lr = self.lr_at(self.t)
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    total_steps: int = 1000
    lr: float = 3e-4
    warmup: int = 200
    batch: int = 8
    seed: int = 0
    k1: float = 0.8
    k2: float | None = None
    clip: float = 1.0
    beam: int = 5
    ablate: tuple[str, ...] = ()
    detach_teacher: bool = True
    d_model: int = 64
    n_heads: int = 2
    n_enc_layers: int = 2
    n_graph_layers: int = 2
    n_dec_layers: int = 2
    max_len: int = 256

    def __post_init__(self):
        bad = [a for a in self.ablate if a not in ABLATIONS]
        if bad:
            raise BadConfig(f"unknown ablation {bad[0]!r}; choose from {', '.join(ABLATIONS)}")
        if self.total_steps < 1 or self.batch < 1:
            raise BadConfig("total_steps and batch must be >= 1")

    def schedule(self) -> LossSchedule:
        return LossSchedule(self.total_steps, self.k1, self.k2)

    def model_config(self, vocab_size: int, use_graph: bool = True, seed: int | None = None) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_enc_layers=self.n_enc_layers,
            n_graph_layers=self.n_graph_layers,
            n_dec_layers=self.n_dec_layers,
            max_len=self.max_len,
            seed=self.seed if seed is None else seed,
            use_graph=use_graph,
        )

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw: dict = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = (s.strip() for s in line.partition("="))
            if not sep or key not in kinds:
                raise BadConfig(f"line {n}: unknown or malformed entry {raw.strip()!r}")
            kw[key] = _parse_value(kinds[key], val, n)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "ablate":
                v = ",".join(v)
            elif v is None:
                v = "auto"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


def _parse_value(kind: str, val: str, line: int):
    try:
        if kind.startswith("tuple"):
            return tuple(s.strip() for s in val.split(",") if s.strip())
        if kind == "bool":
            if val.lower() not in ("true", "false", "1", "0"):
                raise ValueError(val)
            return val.lower() in ("true", "1")
        if "None" in kind:
            return None if val.lower() in ("auto", "none", "") else float(val)
        return int(val) if kind == "int" else float(val)
    except ValueError as exc:
        raise BadConfig(f"line {line}: bad value {val!r}") from exc


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Pair:
    id: str
    x: tuple[int, ...]  # sentence ids + eos
    y: tuple[int, ...]  # L2R ids, no specials
    yr: tuple[int, ...]  # gold R2L ids + eos


@dataclass
class Batch:
    x: list[list[int]]
    y: list[list[int]]
    y_r_gold: list[list[int]]
    y_r_silver: list[list[int]]


def build_vocab(examples: Iterable[Example], max_pointer: int = 32) -> Vocab:
    """Vocabulary over sentence words and L2R graph tokens (R2L uses the same set)."""
    seqs = []
    for ex in examples:
        seqs.append(ex.sentence)
        seqs.append(linearize(ex.graph, Order.L2R).strings())
    return Vocab.build(seqs, max_pointer=max_pointer)


def encode_pairs(vocab: Vocab, examples: Sequence[Example]) -> list[Pair]:
    out = []
    for ex in examples:
        out.append(
            Pair(
                ex.id,
                tuple(encoder_ids(vocab, ex.sentence)),
                tuple(vocab.encode(linearize(ex.graph, Order.L2R).strings())),
                tuple(encoder_ids(vocab, linearize(ex.graph, Order.R2L).strings())),
            )
        )
    return out


def _decoder_io(vocab: Vocab, ys: Sequence[Sequence[int]]):
    inp = [[vocab.bos_id] + list(y) for y in ys]
    tgt = [list(y) + [vocab.eos_id] for y in ys]
    L = max(len(t) for t in tgt)
    targets = np.full((len(ys), L), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((len(ys), L))
    for i, t in enumerate(tgt):
        targets[i, : len(t)] = t
        mask[i, : len(t)] = 1.0
    return inp, targets, mask


# ---------------------------------------------------------------------------
# steps


class StepLosses(NamedTuple):
    L: float
    ce_t: float
    ce_s: float
    kl: float


def rgl_loss(model: RGLModel, batch: Batch, a: float, detach_teacher: bool = True,
             ablate: Sequence[str] = ()) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """(L, CE_T, CE_S, KL) tensors for one two-pass step."""
    inp, targets, mask = _decoder_io(model.vocab, batch.y)
    silver = batch.y_r_gold if "no-silver" in ablate else batch.y_r_silver
    mem_t = model.encode(batch.x, batch.y_r_gold)
    teacher = model.decode(mem_t, inp)
    if silver is batch.y_r_gold:
        student = teacher
    else:
        student = model.decode(model.encode(batch.x, silver), inp)
    ce_t = nc.cross_entropy(teacher, targets, mask)
    ce_s = nc.cross_entropy(student, targets, mask)
    if "no-distill" in ablate:
        kl = Tensor(np.asarray(0.0))
    else:
        kl = nc.kl_from_logits(teacher, student, mask, detach_teacher=detach_teacher)
    L = nc.add(nc.add(nc.mul(ce_t, a), nc.mul(ce_s, 1.0 - a)), kl)
    return L, ce_t, ce_s, kl


def seq2seq_loss(model: RGLModel, xs, ys) -> Tensor:
    inp, targets, mask = _decoder_io(model.vocab, ys)
    return nc.cross_entropy(model.baseline_forward_batch(xs, inp), targets, mask)


@dataclass
class TrainState:
    model: RGLModel
    optimizer: Adam
    config: TrainConfig
    mode: str = "rgl"  # rgl | seq2seq
    step: int = 0
    last_alpha: float = float("nan")
    history: list[tuple[int, float, StepLosses]] = field(default_factory=list)

    @classmethod
    def create(cls, model: RGLModel, config: TrainConfig, mode: str = "rgl") -> "TrainState":
        if mode not in ("rgl", "seq2seq"):
            raise ValueError(f"unknown mode {mode!r}")
        model.gate_mode = "zero" if "gate-zero" in config.ablate else "learned"
        opt = Adam(model.parameters(), config.lr, warmup=config.warmup, clip=config.clip)
        return cls(model, opt, config, mode)

    def alpha(self) -> float:
        if "no-scheduler" in self.config.ablate:
            return 0.5
        return self.config.schedule().alpha(min(self.step, self.config.total_steps))


def train_step(state: TrainState, batch: Batch) -> StepLosses:
    """One optimizer update; returns the losses computed before the update."""
    model = state.model
    state.optimizer.zero_grad()
    if state.mode == "seq2seq":
        a = 1.0
        L = seq2seq_loss(model, batch.x, batch.y)
        out = StepLosses(L.item(), L.item(), L.item(), 0.0)
    else:
        a = state.alpha()
        L, ce_t, ce_s, kl = rgl_loss(model, batch, a, state.config.detach_teacher, state.config.ablate)
        out = StepLosses(L.item(), ce_t.item(), ce_s.item(), kl.item())
    nc.backward(L)
    state.optimizer.step()
    state.last_alpha = a
    state.history.append((state.step, a, out))
    state.step += 1
    return out


def _batches(n: int, size: int, rng: np.random.Generator):
    while True:
        perm = rng.permutation(n)
        for s in range(0, n, size):
            yield perm[s : s + size]


def _log_header(log: TextIO | None):
    if log is not None:
        log.write("step\talpha\tL\tL_CE_T\tL_CE_S\tL_KL\n")


def _log_row(log: TextIO | None, step: int, a: float, out: StepLosses):
    if log is not None:
        log.write(f"{step}\t{a:.4f}\t{out.L:.4f}\t{out.ce_t:.4f}\t{out.ce_s:.4f}\t{out.kl:.4f}\n")


def _run(state: TrainState, make_batch, n: int, log: TextIO | None) -> TrainState:
    rng = np.random.default_rng(state.config.seed)
    batches = _batches(n, state.config.batch, rng)
    _log_header(log)
    while state.step < state.config.total_steps:
        step = state.step
        out = train_step(state, make_batch(next(batches)))
        _log_row(log, step, state.last_alpha, out)
    return state


def train_seq2seq(pairs: Sequence[Pair], vocab: Vocab, config: TrainConfig, target: str = "l2r",
                  log: TextIO | None = None, model: RGLModel | None = None) -> TrainState:
    """Plain encoder-decoder training, sentence -> L2R (baseline) or -> R2L (parser)."""
    if not pairs:
        raise EmptyCorpus("no training pairs")
    if target not in ("l2r", "r2l"):
        raise ValueError("target must be 'l2r' or 'r2l'")
    model = model or RGLModel(config.model_config(len(vocab), use_graph=False), vocab)
    state = TrainState.create(model, config, "seq2seq")

    def make(idx):
        ps = [pairs[i] for i in idx]
        ys = [list(p.y) if target == "l2r" else list(p.yr[:-1]) for p in ps]
        return Batch([list(p.x) for p in ps], ys, [], [])

    return _run(state, make, len(pairs), log)


def train_rgl(pairs: Sequence[Pair], silver: Sequence[Sequence[int]] | None, vocab: Vocab, config: TrainConfig,
              log: TextIO | None = None, model: RGLModel | None = None) -> TrainState:
    """Two-pass self-distillation training.

    ``silver[i]`` holds the encoder ids of the silver R2L input for
    ``pairs[i]``; ``None`` reuses the gold sequence (the no-silver setting).
    """
    if not pairs:
        raise EmptyCorpus("no training pairs")
    if silver is not None and len(silver) != len(pairs):
        raise ValueError("silver and pairs differ in length")
    model = model or RGLModel(config.model_config(len(vocab), use_graph=True), vocab)
    state = TrainState.create(model, config, "rgl")

    def make(idx):
        ps = [pairs[i] for i in idx]
        gold = [list(p.yr) for p in ps]
        sil = gold if silver is None else [list(silver[i]) for i in idx]
        return Batch([list(p.x) for p in ps], [list(p.y) for p in ps], gold, sil)

    return _run(state, make, len(pairs), log)


def train_weak_r2l(pairs: Sequence[Pair], vocab: Vocab, config: TrainConfig, fraction: float = 0.3,
                   seed: int = 0, log: TextIO | None = None) -> tuple[TrainState, list[int]]:
    """R2L parser trained on a seeded ``fraction`` of the pairs.

    Returns the training state and the sorted indices of the sampled subset.
    """
    if not pairs:
        raise EmptyCorpus("no training pairs")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n = max(1, int(round(fraction * len(pairs))))
    idx = sorted(int(i) for i in np.random.default_rng(seed).choice(len(pairs), size=n, replace=False))
    state = train_seq2seq([pairs[i] for i in idx], vocab, config, target="r2l", log=log)
    return state, idx


# ---------------------------------------------------------------------------
# silver data


@dataclass(frozen=True)
class SilverItem:
    id: str
    tokens: TokenSeq
    ok: bool
    error: str = ""


def generate_silver(parser: RGLModel, examples: Sequence[Example], beam: BeamConfig = BeamConfig()) -> list[SilverItem]:
    """Beam-decode every sentence with an R2L parser.

    Items whose decode hit the length limit or does not restore to a graph
    are kept as empty sequences flagged ``ok=False``.
    """
    out = []
    for ex in examples:
        res = decode_tokens(parser, ex.sentence, None, beam)
        seq = TokenSeq.from_strings(parser.vocab.decode(res.best.tokens), Order.R2L)
        err = "" if res.best.finished else "truncated at max_len"
        if not err:
            try:
                delinearize(seq)
            except Unrecoverable as exc:
                err = str(exc)
        if err:
            seq = TokenSeq((), Order.R2L)
        out.append(SilverItem(ex.id, seq, not err, err))
    return out


def silver_ids(vocab: Vocab, items: Sequence[SilverItem]) -> list[list[int]]:
    return [encoder_ids(vocab, it.tokens.strings()) for it in items]


def evaluate_ce(model: RGLModel, pairs: Sequence[Pair], silver: Sequence[Sequence[int]] | None = None,
                batch: int = 16, mode: str = "teacher") -> float:
    """Token-weighted CE over ``pairs``; ``mode`` is teacher, student or seq2seq."""
    total, count = 0.0, 0.0
    with nc.no_grad():
        for s in range(0, len(pairs), batch):
            ps = pairs[s : s + batch]
            inp, targets, mask = _decoder_io(model.vocab, [p.y for p in ps])
            xs = [list(p.x) for p in ps]
            if mode == "seq2seq":
                logits = model.baseline_forward_batch(xs, inp)
            else:
                yr = [list(p.yr) for p in ps] if mode == "teacher" else [list(silver[s + i]) for i in range(len(ps))]
                logits = model.forward_batch(xs, yr, inp)
            n = mask.sum()
            total += nc.cross_entropy(logits, targets, mask).item() * n
            count += n
    return total / max(count, 1.0)
