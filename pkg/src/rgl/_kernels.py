"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names (``score_batch``, ``best_move``, ``two_step``,
``layer_norm_rows``, ``layer_norm_rows_backward``, ``gelu_flat_backward``)
are bound to the numba versions unless ``RGL_DISABLE_NUMBA=1`` is set or
numba is missing.  ``softmax_rows`` and ``gelu_flat`` always use numpy: they
are dominated by exp/tanh, which numpy vectorizes and numba's scalar loops
do not (see benchmarks/bench_kernels.py).  Both flavours are always
importable under their suffixed names so they can be compared in tests and
benchmarks.
"""
import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_disabled() -> bool:
    return os.environ.get("RGL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = NUMBA_AVAILABLE and not _env_disabled()


# ---------------------------------------------------------------------------
# Smatch: a mapping m (pred var -> gold var or -1) scores
#   sum_i U[i, m[i]] + sum_q w[q] * [m[qi]==qj and m[qk]==ql]


def score_batch_numpy(maps, U, qi, qj, qk, ql, qw):
    maps = np.asarray(maps, dtype=np.int64)
    if maps.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    P = U.shape[0]
    mapped = maps >= 0
    safe = np.where(mapped, maps, 0)
    unary = (U[np.arange(P)[None, :], safe] * mapped).sum(axis=1)
    if qi.shape[0] == 0:
        return unary.astype(np.int64)
    hit = (maps[:, qi] == qj[None, :]) & (maps[:, qk] == ql[None, :])
    return (unary + hit.astype(np.int64) @ qw).astype(np.int64)


def best_move_numpy(m, U, qi, qj, qk, ql, qw):
    """Best single reassignment ``m[i] = g`` (swapping with g's current owner).

    Returns ``(gain, i, g)``; ``gain <= 0`` means no improving move.  Among
    equal gains the lexicographically smallest ``(i, g)`` wins.
    """
    P, G = U.shape
    if P == 0 or G == 0:
        return 0, -1, -1
    owner = np.full(G, -1, dtype=np.int64)
    idx = np.nonzero(m >= 0)[0]
    owner[m[idx]] = idx
    ci = np.repeat(np.arange(P), G)
    cg = np.tile(np.arange(G), P)
    keep = cg != m[ci]
    ci, cg = ci[keep], cg[keep]
    if ci.shape[0] == 0:
        return 0, -1, -1
    maps = np.tile(m, (ci.shape[0], 1))
    rows = np.arange(ci.shape[0])
    k = owner[cg]
    maps[rows, ci] = cg
    has = k >= 0
    maps[rows[has], k[has]] = m[ci[has]]
    base = score_batch_numpy(m[None, :], U, qi, qj, qk, ql, qw)[0]
    gains = score_batch_numpy(maps, U, qi, qj, qk, ql, qw) - base
    best = int(np.argmax(gains))
    return int(gains[best]), int(ci[best]), int(cg[best])


@njit(cache=True)
def _score_one(m, U, qi, qj, qk, ql, qw):
    s = 0
    for i in range(m.shape[0]):
        if m[i] >= 0:
            s += U[i, m[i]]
    for q in range(qi.shape[0]):
        if m[qi[q]] == qj[q] and m[qk[q]] == ql[q]:
            s += qw[q]
    return s


@njit(cache=True)
def score_batch_numba(maps, U, qi, qj, qk, ql, qw):
    out = np.empty(maps.shape[0], dtype=np.int64)
    for r in range(maps.shape[0]):
        out[r] = _score_one(maps[r], U, qi, qj, qk, ql, qw)
    return out


@njit(cache=True)
def _incidence(P, qi, qk):
    # CSR lists of the quads touching each pred variable
    ptr = np.zeros(P + 1, dtype=np.int64)
    for q in range(qi.shape[0]):
        ptr[qi[q] + 1] += 1
        if qk[q] != qi[q]:
            ptr[qk[q] + 1] += 1
    for v in range(P):
        ptr[v + 1] += ptr[v]
    idx = np.empty(ptr[P], dtype=np.int64)
    fill = ptr[:-1].copy()
    for q in range(qi.shape[0]):
        idx[fill[qi[q]]] = q
        fill[qi[q]] += 1
        if qk[q] != qi[q]:
            idx[fill[qk[q]]] = q
            fill[qk[q]] += 1
    return ptr, idx


@njit(cache=True)
def _local(t, i, k, U, qi, qj, qk, ql, qw, ptr, idx):
    # the part of the score that depends on t[i] and t[k]
    s = 0
    if t[i] >= 0:
        s += U[i, t[i]]
    for p in range(ptr[i], ptr[i + 1]):
        q = idx[p]
        if t[qi[q]] == qj[q] and t[qk[q]] == ql[q]:
            s += qw[q]
    if k >= 0:
        if t[k] >= 0:
            s += U[k, t[k]]
        for p in range(ptr[k], ptr[k + 1]):
            q = idx[p]
            if qi[q] == i or qk[q] == i:
                continue
            if t[qi[q]] == qj[q] and t[qk[q]] == ql[q]:
                s += qw[q]
    return s


@njit(cache=True)
def _best_move_csr(m, owner, U, qi, qj, qk, ql, qw, ptr, idx):
    P, G = U.shape
    best_gain = -(1 << 60)
    bi = -1
    bg = -1
    for i in range(P):
        mi = m[i]
        for g in range(G):
            if g == mi:
                continue
            k = owner[g]
            before = _local(m, i, k, U, qi, qj, qk, ql, qw, ptr, idx)
            m[i] = g
            if k >= 0:
                m[k] = mi
            gain = _local(m, i, k, U, qi, qj, qk, ql, qw, ptr, idx) - before
            m[i] = mi
            if k >= 0:
                m[k] = g
            if gain > best_gain:
                best_gain = gain
                bi = i
                bg = g
    if bi < 0:
        return 0, -1, -1
    return best_gain, bi, bg


@njit(cache=True)
def _owners(m, G):
    owner = np.full(G, -1, dtype=np.int64)
    for i in range(m.shape[0]):
        if m[i] >= 0:
            owner[m[i]] = i
    return owner


@njit(cache=True)
def best_move_numba(m, U, qi, qj, qk, ql, qw):
    P, G = U.shape
    ptr, idx = _incidence(P, qi, qk)
    return _best_move_csr(m.copy(), _owners(m, G), U, qi, qj, qk, ql, qw, ptr, idx)


def _reassign(m, i, g):
    # m[i] = g, handing i's old image to g's current owner
    for k in range(m.shape[0]):
        if m[k] == g and k != i:
            m[k] = m[i]
            break
    m[i] = g


def _first_moves(m, qi, qj, qk, ql, G):
    # every single reassignment, then every joint move placing one relation match
    P = m.shape[0]
    out = []
    for i in range(P):
        for g in range(G):
            if m[i] != g:
                t = m.copy()
                _reassign(t, i, g)
                out.append(t)
    for r in range(qi.shape[0]):
        t = m.copy()
        _reassign(t, qi[r], qj[r])
        _reassign(t, qk[r], ql[r])
        out.append(t)
    return out


def two_step_numpy(m, U, qi, qj, qk, ql, qw):
    """Best (first move, best single move) sequence; the first move may lose.

    First moves are every single reassignment followed by every joint move
    that places both ends of one relation match.  Returns ``(gain, mapping)``
    with the first strictly best sequence, or ``(0, m)`` when none gains.
    """
    m = np.asarray(m, dtype=np.int64)
    firsts = _first_moves(m, qi, qj, qk, ql, U.shape[1])
    best_gain, best_m = 0, m.copy()
    if not firsts:
        return best_gain, best_m
    base = score_batch_numpy(m[None, :], U, qi, qj, qk, ql, qw)[0]
    first_scores = score_batch_numpy(np.stack(firsts), U, qi, qj, qk, ql, qw) - base
    for t, first in zip(firsts, first_scores):
        gain, k, h = best_move_numpy(t, U, qi, qj, qk, ql, qw)
        if k >= 0 and first + gain > best_gain:
            _reassign(t, k, h)
            best_gain, best_m = int(first + gain), t
    return best_gain, best_m


_reassign_nb = njit(cache=True)(_reassign)


@njit(cache=True)
def _two_step_from(t, base, best_gain, best_m, U, qi, qj, qk, ql, qw, ptr, idx):
    first = _score_one(t, U, qi, qj, qk, ql, qw) - base
    gain, k, h = _best_move_csr(t, _owners(t, U.shape[1]), U, qi, qj, qk, ql, qw, ptr, idx)
    if k >= 0 and first + gain > best_gain:
        best_m[:] = t
        _reassign_nb(best_m, k, h)
        return first + gain
    return best_gain


@njit(cache=True)
def two_step_numba(m, U, qi, qj, qk, ql, qw):
    P, G = U.shape
    ptr, idx = _incidence(P, qi, qk)
    base = _score_one(m, U, qi, qj, qk, ql, qw)
    best_gain = 0
    best_m = m.copy()
    t = m.copy()
    for i in range(P):
        for g in range(G):
            if m[i] == g:
                continue
            t[:] = m
            _reassign_nb(t, i, g)
            best_gain = _two_step_from(t, base, best_gain, best_m, U, qi, qj, qk, ql, qw, ptr, idx)
    for r in range(qi.shape[0]):
        t[:] = m
        _reassign_nb(t, qi[r], qj[r])
        _reassign_nb(t, qk[r], ql[r])
        best_gain = _two_step_from(t, base, best_gain, best_m, U, qi, qj, qk, ql, qw, ptr, idx)
    return best_gain, best_m


# ---------------------------------------------------------------------------
# row-wise numerics on 2-D float64 arrays


def softmax_rows_numpy(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm_rows_numpy(x, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return xc * rstd, rstd[:, 0]


def layer_norm_rows_backward_numpy(dxhat, xhat, rstd):
    n = xhat.shape[1]
    a = dxhat.sum(axis=1, keepdims=True) / n
    b = (dxhat * xhat).sum(axis=1, keepdims=True) / n
    return rstd[:, None] * (dxhat - a - xhat * b)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu_flat_numpy(x):
    """tanh-approximated GELU of a flat array; returns (y, tanh(inner))."""
    th = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + th), th


def gelu_flat_backward_numpy(g, x, th):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner)


@njit(cache=True)
def gelu_flat_numba(x):
    y = np.empty_like(x)
    th = np.empty_like(x)
    for i in range(x.shape[0]):
        v = x[i]
        t = np.tanh(_GELU_C * (v + 0.044715 * v * v * v))
        th[i] = t
        y[i] = 0.5 * v * (1.0 + t)
    return y, th


@njit(cache=True)
def gelu_flat_backward_numba(g, x, th):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        v = x[i]
        t = th[i]
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        out[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
    return out


@njit(cache=True)
def softmax_rows_numba(x):
    out = np.empty_like(x)
    for r in range(x.shape[0]):
        mx = x[r, 0]
        for c in range(1, x.shape[1]):
            if x[r, c] > mx:
                mx = x[r, c]
        s = 0.0
        for c in range(x.shape[1]):
            e = np.exp(x[r, c] - mx)
            out[r, c] = e
            s += e
        for c in range(x.shape[1]):
            out[r, c] /= s
    return out


@njit(cache=True)
def layer_norm_rows_numba(x, eps):
    R, n = x.shape
    out = np.empty_like(x)
    rstd = np.empty(R)
    for r in range(R):
        mean = 0.0
        for c in range(n):
            mean += x[r, c]
        mean /= n
        var = 0.0
        for c in range(n):
            d = x[r, c] - mean
            var += d * d
        var /= n
        rs = 1.0 / np.sqrt(var + eps)
        rstd[r] = rs
        for c in range(n):
            out[r, c] = (x[r, c] - mean) * rs
    return out, rstd


@njit(cache=True)
def layer_norm_rows_backward_numba(dxhat, xhat, rstd):
    R, n = xhat.shape
    out = np.empty_like(xhat)
    for r in range(R):
        a = 0.0
        b = 0.0
        for c in range(n):
            a += dxhat[r, c]
            b += dxhat[r, c] * xhat[r, c]
        a /= n
        b /= n
        for c in range(n):
            out[r, c] = rstd[r] * (dxhat[r, c] - a - xhat[r, c] * b)
    return out


if USE_NUMBA:
    score_batch = score_batch_numba
    best_move = best_move_numba
    two_step = two_step_numba
    layer_norm_rows = layer_norm_rows_numba
    layer_norm_rows_backward = layer_norm_rows_backward_numba
    gelu_flat_backward = gelu_flat_backward_numba
else:
    score_batch = score_batch_numpy
    best_move = best_move_numpy
    two_step = two_step_numpy
    layer_norm_rows = layer_norm_rows_numpy
    layer_norm_rows_backward = layer_norm_rows_backward_numpy
    gelu_flat_backward = gelu_flat_backward_numpy


softmax_rows = softmax_rows_numpy
gelu_flat = gelu_flat_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
