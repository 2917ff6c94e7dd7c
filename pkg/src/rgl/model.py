"""Toy-scale reverse-graph-linearization seq2seq model.

Sentence encoder and graph encoder are standard pre-norm transformer
encoders sharing one embedding table with the decoder.  Every decoder layer
replaces cross-attention with a gated dual cross-attention: the same query
``S_z`` attends to the sentence states and to the graph states, and a
per-position scalar gate mixes the two results.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from . import numcore as nc
from .numcore import Tensor
from .vocab import Vocab

__all__ = [
    "ModelConfig",
    "DecoderLayerOutput",
    "Memory",
    "RGLModel",
    "TooLong",
    "UnknownTokenId",
    "dual_cross_attention",
    "pad_batch",
    "IncrementalDecoder",
]

NEG_INF = -1e9


class TooLong(ValueError):
    pass


class UnknownTokenId(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 2
    n_enc_layers: int = 2
    n_graph_layers: int = 2
    n_dec_layers: int = 2
    max_len: int = 256
    seed: int = 0
    d_ff: int = 0  # 0 means 4 * d_model
    use_graph: bool = True

    def __post_init__(self):
        if self.d_ff == 0:
            self.d_ff = 4 * self.d_model
        for name in ("vocab_size", "d_model", "n_heads", "n_enc_layers", "n_dec_layers", "max_len", "d_ff"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_graph_layers < 0:
            raise ValueError("n_graph_layers must be >= 0")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    def to_header(self) -> dict[str, str]:
        return {f"config.{k}": str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_header(cls, header: dict[str, str]) -> "ModelConfig":
        kw = {}
        for f in fields(cls):
            raw = header.get(f"config.{f.name}")
            if raw is None:
                continue
            kw[f.name] = raw == "True" if f.type in ("bool", bool) else int(raw)
        return cls(**kw)


@dataclass
class DecoderLayerOutput:
    S_z: Tensor
    S_s: Tensor
    S_g: Tensor | None
    S_o: Tensor
    g: Tensor | None  # (..., K, 1)


@dataclass
class Memory:
    H_s: Tensor
    s_mask: np.ndarray
    H_g: Tensor | None = None
    g_mask: np.ndarray | None = None

    def repeat(self, n: int) -> "Memory":
        """Tile a single-example memory ``n`` times along the batch axis (no grad)."""
        rep = lambda t: None if t is None else Tensor(np.repeat(t.data, n, axis=0))
        rm = lambda m: None if m is None else np.repeat(m, n, axis=0)
        return Memory(rep(self.H_s), rm(self.s_mask), rep(self.H_g), rm(self.g_mask))


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to a (B, L) id array; returns ids and a 0/1 validity mask."""
    L = max((len(s) for s in seqs), default=0)
    ids = np.full((len(seqs), max(L, 1)), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), max(L, 1)), dtype=np.float64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def _sinusoid(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _key_mask(valid: np.ndarray) -> np.ndarray:
    # (B, L) validity -> additive (B, 1, 1, L)
    return np.where(valid > 0, 0.0, NEG_INF)[:, None, None, :]


def _linear(x: Tensor, p: dict, name: str) -> Tensor:
    return nc.add(nc.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def _mha(xq: Tensor, xkv: Tensor, p: dict, prefix: str, n_heads: int, mask) -> Tensor:
    B, n, d = xq.shape
    m = xkv.shape[1]
    dh = d // n_heads

    def heads(t, L):
        return nc.transpose(nc.reshape(t, (B, L, n_heads, dh)), (0, 2, 1, 3))

    q = heads(_linear(xq, p, f"{prefix}.q"), n)
    k = heads(_linear(xkv, p, f"{prefix}.k"), m)
    v = heads(_linear(xkv, p, f"{prefix}.v"), m)
    a = nc.scaled_dot_attention(q, k, v, mask)
    a = nc.reshape(nc.transpose(a, (0, 2, 1, 3)), (B, n, d))
    return _linear(a, p, f"{prefix}.o")


def _ln(x: Tensor, p: dict, name: str) -> Tensor:
    return nc.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"], eps=1e-5)


def _ffn(x: Tensor, p: dict, prefix: str) -> Tensor:
    return _linear(nc.gelu(_linear(x, p, f"{prefix}.fc1")), p, f"{prefix}.fc2")


def dual_cross_attention(
    S_z: Tensor,
    H_s: Tensor,
    H_g: Tensor | None,
    params: dict,
    prefix: str,
    n_heads: int,
    s_mask=None,
    g_mask=None,
    gate_mode: str = "learned",
) -> DecoderLayerOutput:
    """S_o = g * S_g + (1 - g) * S_s with g = sigmoid(V^T tanh(W^T S_z + b1) + b2).

    ``gate_mode="zero"`` forces g = 0 (graph branch ablated); ``H_g=None``
    is the plain single cross-attention of the baseline.
    """
    S_s = _mha(S_z, H_s, params, f"{prefix}.xs", n_heads, s_mask)
    if H_g is None or gate_mode == "zero":
        return DecoderLayerOutput(S_z, S_s, None, S_s, None)
    S_g = _mha(S_z, H_g, params, f"{prefix}.xg", n_heads, g_mask)
    hidden = nc.tanh(nc.add(nc.matmul(S_z, params[f"{prefix}.gate.W"]), params[f"{prefix}.gate.b1"]))
    g = nc.sigmoid(nc.add(nc.matmul(hidden, params[f"{prefix}.gate.V"]), params[f"{prefix}.gate.b2"]))
    S_o = nc.add(S_s, nc.scale_rows(nc.sub(S_g, S_s), g))
    return DecoderLayerOutput(S_z, S_s, S_g, S_o, g)


class RGLModel:
    """Sentence encoder + graph encoder + mixed decoder."""

    def __init__(self, config: ModelConfig, vocab: Vocab | None = None):
        self.config = config
        self.vocab = vocab
        self.gate_mode = "learned"
        self.params: dict[str, Tensor] = {}
        self._pe = _sinusoid(config.max_len + 1, config.d_model)
        self._init_params(np.random.default_rng(config.seed))

    # -- parameters -------------------------------------------------------

    def _add(self, name, shape, rng, fan_in=None, zero=False, one=False):
        if zero or one:
            t = Tensor(np.full(shape, 1.0 if one else 0.0), requires_grad=True, name=name)
        else:
            t = nc.parameter(shape, rng, fan_in, name=name)
        self.params[name] = t

    def _linear_params(self, name, d_in, d_out, rng):
        self._add(f"{name}.w", (d_in, d_out), rng, fan_in=d_in)
        self._add(f"{name}.b", (d_out,), rng, zero=True)

    def _ln_params(self, name, d):
        self._add(f"{name}.g", (d,), None, one=True)
        self._add(f"{name}.b", (d,), None, zero=True)

    def _attn_params(self, prefix, d, rng):
        for part in ("q", "k", "v", "o"):
            self._linear_params(f"{prefix}.{part}", d, d, rng)

    def _enc_params(self, prefix, n_layers, rng):
        c = self.config
        for l in range(n_layers):
            p = f"{prefix}.{l}"
            self._ln_params(f"{p}.ln1", c.d_model)
            self._attn_params(f"{p}.sa", c.d_model, rng)
            self._ln_params(f"{p}.ln2", c.d_model)
            self._linear_params(f"{p}.ff.fc1", c.d_model, c.d_ff, rng)
            self._linear_params(f"{p}.ff.fc2", c.d_ff, c.d_model, rng)
        if n_layers:
            self._ln_params(f"{prefix}.ln_f", c.d_model)

    def _init_params(self, rng):
        c = self.config
        d = c.d_model
        self._add("embed", (c.vocab_size, d), rng, fan_in=d)
        self._enc_params("enc", c.n_enc_layers, rng)
        if c.use_graph:
            self._enc_params("genc", c.n_graph_layers, rng)
        for l in range(c.n_dec_layers):
            p = f"dec.{l}"
            self._ln_params(f"{p}.ln1", d)
            self._attn_params(f"{p}.sa", d, rng)
            self._ln_params(f"{p}.ln2", d)
            self._attn_params(f"{p}.xs", d, rng)
            if c.use_graph:
                self._attn_params(f"{p}.xg", d, rng)
                self._add(f"{p}.gate.W", (d, d), rng, fan_in=d)
                self._add(f"{p}.gate.b1", (d,), rng, zero=True)
                self._add(f"{p}.gate.V", (d, 1), rng, fan_in=d)
                self._add(f"{p}.gate.b2", (1,), rng, zero=True)
            self._ln_params(f"{p}.ln3", d)
            self._linear_params(f"{p}.ff.fc1", d, c.d_ff, rng)
            self._linear_params(f"{p}.ff.fc2", c.d_ff, d, rng)
        self._ln_params("dec.ln_f", d)
        self._linear_params("out", d, c.vocab_size, rng)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for k, t in self.params.items():
            if state[k].shape != t.shape:
                raise ValueError(f"{k}: shape {state[k].shape} vs {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)

    def save(self, path: str | Path, extra: dict[str, str] | None = None) -> None:
        header = self.config.to_header()
        if self.vocab is not None:
            header["vocab"] = self.vocab.to_text()
        header.update(extra or {})
        nc.save_checkpoint(path, self.state_dict(), header)

    @classmethod
    def load(cls, path: str | Path) -> "RGLModel":
        header, state = nc.load_checkpoint(path)
        vocab = Vocab.from_text(header["vocab"]) if "vocab" in header else None
        model = cls(ModelConfig.from_header(header), vocab)
        model.load_state_dict(state)
        model.header = header
        return model

    # -- encoders ---------------------------------------------------------

    def _check(self, ids: np.ndarray):
        c = self.config
        if ids.shape[1] > c.max_len:
            raise TooLong(f"sequence of length {ids.shape[1]} exceeds max_len={c.max_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= c.vocab_size):
            raise UnknownTokenId(f"token id outside [0, {c.vocab_size})")

    def embed(self, ids: np.ndarray) -> Tensor:
        self._check(ids)
        d = self.config.d_model
        e = nc.mul(nc.embedding_lookup(self.params["embed"], ids), math.sqrt(d))
        return nc.add(e, Tensor(np.broadcast_to(self._pe[: ids.shape[1]], e.shape).copy()))

    def _encode_stack(self, prefix: str, n_layers: int, ids: np.ndarray, valid: np.ndarray) -> Tensor:
        p = self.params
        x = self.embed(ids)
        mask = _key_mask(valid)
        for l in range(n_layers):
            pl = f"{prefix}.{l}"
            x = nc.add(x, _mha(_ln(x, p, f"{pl}.ln1"), _ln(x, p, f"{pl}.ln1"), p, f"{pl}.sa", self.config.n_heads, mask))
            x = nc.add(x, _ffn(_ln(x, p, f"{pl}.ln2"), p, f"{pl}.ff"))
        if n_layers:
            x = _ln(x, p, f"{prefix}.ln_f")
        return x

    def encode_sentence(self, x) -> Tensor:
        """H_s for one sentence (N, d) or a padded batch (B, N, d)."""
        ids, valid, single = _as_batch(x)
        H = self._encode_stack("enc", self.config.n_enc_layers, ids, valid)
        return _unbatch(H) if single else H

    def encode_graph(self, y_r) -> Tensor:
        if not self.config.use_graph:
            raise RuntimeError("model was built without a graph encoder")
        ids, valid, single = _as_batch(y_r)
        H = self._encode_stack("genc", self.config.n_graph_layers, ids, valid)
        return _unbatch(H) if single else H

    def encode(self, xs: Sequence[Sequence[int]], yrs: Sequence[Sequence[int]] | None = None) -> Memory:
        ids, valid = pad_batch(xs)
        H_s = self._encode_stack("enc", self.config.n_enc_layers, ids, valid)
        mem = Memory(H_s, _key_mask(valid))
        if yrs is not None:
            gids, gvalid = pad_batch(yrs)
            mem.H_g = self._encode_stack("genc", self.config.n_graph_layers, gids, gvalid)
            mem.g_mask = _key_mask(gvalid)
        return mem

    # -- decoder ----------------------------------------------------------

    def decode(self, mem: Memory, ys: Sequence[Sequence[int]] | np.ndarray, trace: bool = False):
        """Logits (B, K, V) for decoder inputs ``ys``; with ``trace`` also the
        per-layer gate arrays (B, K) (``None`` for layers without a gate)."""
        ids = ys if isinstance(ys, np.ndarray) else pad_batch(ys)[0]
        p = self.params
        c = self.config
        K = ids.shape[1]
        causal = np.triu(np.full((K, K), NEG_INF), k=1)[None, None]
        h = self.embed(ids)
        gates = []
        for l in range(c.n_dec_layers):
            pl = f"dec.{l}"
            a = _ln(h, p, f"{pl}.ln1")
            h = nc.add(h, _mha(a, a, p, f"{pl}.sa", c.n_heads, causal))
            S_z = _ln(h, p, f"{pl}.ln2")
            out = dual_cross_attention(
                S_z, mem.H_s, mem.H_g, p, pl, c.n_heads, mem.s_mask, mem.g_mask, self.gate_mode
            )
            h = nc.add(h, out.S_o)
            h = nc.add(h, _ffn(_ln(h, p, f"{pl}.ln3"), p, f"{pl}.ff"))
            if trace:
                gates.append(None if out.g is None else out.g.data[..., 0].copy())
        logits = _linear(_ln(h, p, "dec.ln_f"), p, "out")
        return (logits, gates) if trace else logits

    def forward_batch(self, xs, yrs, ys, trace: bool = False):
        return self.decode(self.encode(xs, yrs), ys, trace)

    def baseline_forward_batch(self, xs, ys, trace: bool = False):
        return self.decode(self.encode(xs, None), ys, trace)

    def forward(self, x: Sequence[int], y_r: Sequence[int], y_prefix: Sequence[int]) -> Tensor:
        """Logits (|y_prefix|, V) for one example."""
        return _unbatch(self.forward_batch([list(x)], [list(y_r)], [list(y_prefix)]))

    def baseline_forward(self, x: Sequence[int], y_prefix: Sequence[int]) -> Tensor:
        return _unbatch(self.baseline_forward_batch([list(x)], [list(y_prefix)]))


def _as_batch(x):
    arr = x.data if isinstance(x, Tensor) else x
    if isinstance(arr, np.ndarray) and arr.ndim == 2:
        return arr.astype(np.int64), np.ones(arr.shape), False
    ids = np.asarray(list(arr), dtype=np.int64)[None, :]
    return ids, np.ones(ids.shape), True


def _unbatch(t: Tensor) -> Tensor:
    return nc.reshape(t, t.shape[1:])


# ---------------------------------------------------------------------------
# cached inference path


def _np_ln(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    xhat, _ = _kernels.layer_norm_rows(np.ascontiguousarray(x.reshape(-1, x.shape[-1])), 1e-5)
    return xhat.reshape(x.shape) * g + b


def _np_gelu(x: np.ndarray) -> np.ndarray:
    return _kernels.gelu_flat(np.ascontiguousarray(x).reshape(-1))[0].reshape(x.shape)


def _np_attend(q, k, v, mask=None):
    s = np.matmul(q, np.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        s = s + mask
    p = _kernels.softmax_rows(np.ascontiguousarray(s.reshape(-1, s.shape[-1]))).reshape(s.shape)
    return np.matmul(p, v)


class IncrementalDecoder:
    """Key/value-cached decoder for inference on one encoded input.

    ``step(prefixes)`` takes a (B, t) id array and returns next-token
    log-probabilities (B, V).  Rows that extend a prefix seen in the previous
    call reuse its cache, so each beam step costs one position per row; any
    other batch is recomputed from scratch.  Results agree with
    ``RGLModel.decode`` up to float rounding.
    """

    def __init__(self, model: RGLModel, mem: Memory):
        self.model = model
        c = model.config
        self.h = c.n_heads
        self.p = {k: v.data for k, v in model.params.items()}
        self.cross = []
        for l in range(c.n_dec_layers):
            pl = f"dec.{l}"
            xs = self._kv(mem.H_s.data, f"{pl}.xs")
            xg = None
            if mem.H_g is not None and model.gate_mode != "zero":
                xg = self._kv(mem.H_g.data, f"{pl}.xg")
            self.cross.append((xs, xg))
        self.s_mask, self.g_mask = mem.s_mask, mem.g_mask
        self._rows: dict[tuple, int] = {}
        self._cache: list[tuple[np.ndarray, np.ndarray]] = []

    def _split(self, x):
        B, n, d = x.shape
        return x.reshape(B, n, self.h, d // self.h).transpose(0, 2, 1, 3)

    def _lin(self, x, name):
        return x @ self.p[f"{name}.w"] + self.p[f"{name}.b"]

    def _kv(self, H, prefix):
        return self._split(self._lin(H, f"{prefix}.k")), self._split(self._lin(H, f"{prefix}.v"))

    def _cross(self, S_z, kv, prefix, mask):
        B = S_z.shape[0]
        k, v = kv
        if k.shape[0] != B:
            k, v = np.broadcast_to(k, (B,) + k.shape[1:]), np.broadcast_to(v, (B,) + v.shape[1:])
        a = _np_attend(self._split(self._lin(S_z, f"{prefix}.q")), k, v, mask)
        return self._lin(a.transpose(0, 2, 1, 3).reshape(S_z.shape), f"{prefix}.o")

    def _advance(self, tokens: np.ndarray, pos: int, caches):
        """Run one position for every row; ``caches`` holds per-layer (K, V) or None."""
        p, m = self.p, self.model
        d = m.config.d_model
        h = p["embed"][tokens][:, None, :] * math.sqrt(d) + m._pe[pos]
        new = []
        for l, (xs, xg) in enumerate(self.cross):
            pl = f"dec.{l}"
            a = _np_ln(h, p[f"{pl}.ln1.g"], p[f"{pl}.ln1.b"])
            q = self._split(self._lin(a, f"{pl}.sa.q"))
            k = self._split(self._lin(a, f"{pl}.sa.k"))
            v = self._split(self._lin(a, f"{pl}.sa.v"))
            if caches is not None:
                k = np.concatenate([caches[l][0], k], axis=2)
                v = np.concatenate([caches[l][1], v], axis=2)
            new.append((k, v))
            att = _np_attend(q, k, v).transpose(0, 2, 1, 3).reshape(h.shape)
            h = h + self._lin(att, f"{pl}.sa.o")
            S_z = _np_ln(h, p[f"{pl}.ln2.g"], p[f"{pl}.ln2.b"])
            S_s = self._cross(S_z, xs, f"{pl}.xs", self.s_mask)
            if xg is None:
                S_o = S_s
            else:
                S_g = self._cross(S_z, xg, f"{pl}.xg", self.g_mask)
                hid = np.tanh(S_z @ p[f"{pl}.gate.W"] + p[f"{pl}.gate.b1"])
                z = hid @ p[f"{pl}.gate.V"] + p[f"{pl}.gate.b2"]
                g = 1.0 / (1.0 + np.exp(-z))
                S_o = S_s + (S_g - S_s) * g
            h = h + S_o
            f = _np_ln(h, p[f"{pl}.ln3.g"], p[f"{pl}.ln3.b"])
            h = h + self._lin(_np_gelu(self._lin(f, f"{pl}.ff.fc1")), f"{pl}.ff.fc2")
        logits = self._lin(_np_ln(h, p["dec.ln_f.g"], p["dec.ln_f.b"]), "out")[:, 0, :]
        return logits, new

    def logits(self, prefixes: np.ndarray) -> np.ndarray:
        prefixes = np.asarray(prefixes, dtype=np.int64)
        B, t = prefixes.shape
        if t > self.model.config.max_len:
            raise TooLong(f"prefix of length {t} exceeds max_len={self.model.config.max_len}")
        parents = [self._rows.get(tuple(r[:-1])) for r in prefixes.tolist()]
        if t > 1 and self._cache and all(i is not None for i in parents):
            idx = np.array(parents)
            caches = [(k[idx], v[idx]) for k, v in self._cache]
            logits, self._cache = self._advance(prefixes[:, -1], t - 1, caches)
        else:
            caches = None
            for pos in range(t):
                logits, caches = self._advance(prefixes[:, pos], pos, caches)
            self._cache = caches
        self._rows = {tuple(r): i for i, r in enumerate(prefixes.tolist())}
        return logits

    def step(self, prefixes: np.ndarray) -> np.ndarray:
        a = self.logits(prefixes)
        z = a - a.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
