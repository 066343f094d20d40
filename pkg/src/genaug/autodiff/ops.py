"""Differentiable primitives.

Each op accepts Vars or plain arrays. If no argument is a Var the result is
a plain ndarray (nothing is recorded); otherwise the op is recorded on the
arguments' tape and a Var is returned. Constant subgraphs (e.g. a frozen
backbone trunk) therefore cost nothing at backward time, and the same
forward code runs tape-free for inference.

Supported primitives: matmul, add/sub/mul/div, elementwise nonlinearities,
softmax / log-softmax, layer normalization, embedding lookup, gathers,
concatenation/reshaping, and reductions.
"""

import numpy as np

from .. import _kernels as K
from .tape import Var, backward_rule

_LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


def softmax_stable(logits) -> np.ndarray:
    """Max-shifted softmax of a vector (plain numpy, not taped)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty logits")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def _data(x):
    return x.data if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _idx(x):
    return x.idx if isinstance(x, Var) else None


def _tape_of(*args):
    t = None
    for a in args:
        if isinstance(a, Var):
            if t is None:
                t = a.tape
            elif a.tape is not t:
                raise ValueError("arguments belong to different tapes")
    return t


def _emit(op, out, args, saved=()):
    t = _tape_of(*args)
    if t is None:
        return out
    return t.record(op, out, tuple(_idx(a) for a in args), saved)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    da, db = _data(a), _data(b)
    return _emit("add", da + db, (a, b), (da.shape, db.shape))


@backward_rule("add")
def _add_bwd(node, g):
    sa, sb = node.saved
    return ((0, _unbroadcast(g, sa)), (1, _unbroadcast(g, sb)))


def sub(a, b):
    da, db = _data(a), _data(b)
    return _emit("sub", da - db, (a, b), (da.shape, db.shape))


@backward_rule("sub")
def _sub_bwd(node, g):
    sa, sb = node.saved
    return ((0, _unbroadcast(g, sa)), (1, -_unbroadcast(g, sb)))


def mul(a, b):
    da, db = _data(a), _data(b)
    return _emit("mul", da * db, (a, b), (da, db))


@backward_rule("mul")
def _mul_bwd(node, g):
    da, db = node.saved
    return ((0, _unbroadcast(g * db, da.shape)), (1, _unbroadcast(g * da, db.shape)))


def div(a, b):
    da, db = _data(a), _data(b)
    return _emit("div", da / db, (a, b), (da, db))


@backward_rule("div")
def _div_bwd(node, g):
    da, db = node.saved
    ga = _unbroadcast(g / db, da.shape)
    gb = _unbroadcast(-g * da / (db * db), db.shape)
    return ((0, ga), (1, gb))


def neg(a):
    return _emit("neg", -_data(a), (a,))


@backward_rule("neg")
def _neg_bwd(node, g):
    return ((0, -g),)


def scale(a, c: float):
    return _emit("scale", _data(a) * c, (a,), (float(c),))


@backward_rule("scale")
def _scale_bwd(node, g):
    return ((0, g * node.saved[0]),)


def matmul(a, b):
    da, db = _data(a), _data(b)
    return _emit("matmul", da @ db, (a, b), (da, db))


@backward_rule("matmul")
def _matmul_bwd(node, g):
    da, db = node.saved
    return ((0, g @ db.T), (1, da.T @ g))


def dot(a, b):
    da, db = _data(a), _data(b)
    return _emit("dot", np.asarray(da @ db), (a, b), (da, db))


@backward_rule("dot")
def _dot_bwd(node, g):
    da, db = node.saved
    return ((0, g * db), (1, g * da))


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(a):
    out = np.exp(_data(a))
    return _emit("exp", out, (a,), (out,))


@backward_rule("exp")
def _exp_bwd(node, g):
    return ((0, g * node.saved[0]),)


def log(a):
    da = _data(a)
    return _emit("log", np.log(da), (a,), (da,))


@backward_rule("log")
def _log_bwd(node, g):
    return ((0, g / node.saved[0]),)


def tanh(a):
    out = np.tanh(_data(a))
    return _emit("tanh", out, (a,), (out,))


@backward_rule("tanh")
def _tanh_bwd(node, g):
    t = node.saved[0]
    return ((0, g * (1.0 - t * t)),)


def gelu(a):
    """tanh-approximated GELU."""
    x = _data(a)
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return _emit("gelu", 0.5 * x * (1.0 + t), (a,), (x, t))


@backward_rule("gelu")
def _gelu_bwd(node, g):
    x, t = node.saved
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
    return ((0, g * dx),)


def clamp_min(a, floor: float):
    da = _data(a)
    mask = (da >= floor).astype(np.float64)
    return _emit("clamp_min", np.maximum(da, floor), (a,), (mask,))


@backward_rule("clamp_min")
def _clamp_min_bwd(node, g):
    return ((0, g * node.saved[0]),)


# ---------------------------------------------------------------------------
# softmax family / layer norm / attention (kernel-backed)


def _rows(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax(a):
    da = _data(a)
    p = K.softmax_fwd(_rows(da)).reshape(da.shape)
    return _emit("softmax", p, (a,), (p,))


@backward_rule("softmax")
def _softmax_bwd(node, g):
    p = node.saved[0]
    dx = K.softmax_bwd(_rows(p), _rows(g)).reshape(p.shape)
    return ((0, dx),)


def log_softmax(a):
    da = _data(a)
    lp = K.log_softmax_fwd(_rows(da)).reshape(da.shape)
    return _emit("log_softmax", lp, (a,), (lp,))


@backward_rule("log_softmax")
def _log_softmax_bwd(node, g):
    lp = node.saved[0]
    dx = K.log_softmax_bwd(_rows(lp), _rows(g)).reshape(lp.shape)
    return ((0, dx),)


def layernorm(x, g, b):
    dx, dg, db = _data(x), _data(g), _data(b)
    y, mu, rstd = K.layernorm_fwd(np.ascontiguousarray(dx), dg, db, _LN_EPS)
    return _emit("layernorm", y, (x, g, b), (dx, dg, mu, rstd))


@backward_rule("layernorm")
def _layernorm_bwd(node, g):
    x, gain, mu, rstd = node.saved
    dx, dgain, dbias = K.layernorm_bwd(
        np.ascontiguousarray(x), gain, mu, rstd, np.ascontiguousarray(g)
    )
    return ((0, dx), (1, dgain), (2, dbias))


def attention(q, k, v):
    """Causal multi-head attention; (H, T, D) inputs, leading context in k/v."""
    dq, dk, dv = _data(q), _data(k), _data(v)
    out, probs = K.attn_fwd(
        np.ascontiguousarray(dq), np.ascontiguousarray(dk), np.ascontiguousarray(dv)
    )
    return _emit("attention", out, (q, k, v), (dq, dk, dv, probs))


@backward_rule("attention")
def _attention_bwd(node, g):
    q, k, v, probs = node.saved
    gq, gk, gv = K.attn_bwd(q, k, v, probs, np.ascontiguousarray(g))
    return ((0, gq), (1, gk), (2, gv))


# ---------------------------------------------------------------------------
# lookup / indexing / shape


def embed(table, ids):
    dt = _data(table)
    ids = np.asarray(ids, dtype=np.intp)
    return _emit("embed", dt[ids], (table,), (dt.shape, ids))


@backward_rule("embed")
def _embed_bwd(node, g):
    shape, ids = node.saved
    dt = np.zeros(shape)
    np.add.at(dt, ids, g)
    return ((0, dt),)


def pick(a, rows, cols):
    """Gather a[rows[i], cols[i]] -> 1D vector."""
    da = _data(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    return _emit("pick", da[rows, cols], (a,), (da.shape, rows, cols))


@backward_rule("pick")
def _pick_bwd(node, g):
    shape, rows, cols = node.saved
    da = np.zeros(shape)
    np.add.at(da, (rows, cols), g)
    return ((0, da),)


def take(a, idx):
    """Gather elements of a 1D vector."""
    da = _data(a)
    idx = np.asarray(idx, dtype=np.intp)
    return _emit("take", da[idx], (a,), (da.shape, idx))


@backward_rule("take")
def _take_bwd(node, g):
    shape, idx = node.saved
    da = np.zeros(shape)
    np.add.at(da, idx, g)
    return ((0, da),)


def take0(a, i: int):
    """a[i] along axis 0 (dropping the axis)."""
    da = _data(a)
    return _emit("take0", da[i], (a,), (da.shape, int(i)))


@backward_rule("take0")
def _take0_bwd(node, g):
    shape, i = node.saved
    da = np.zeros(shape)
    da[i] = g
    return ((0, da),)


def slice0(a, start: int, stop: int):
    da = _data(a)
    return _emit("slice0", da[start:stop], (a,), (da.shape, start, stop))


@backward_rule("slice0")
def _slice0_bwd(node, g):
    shape, start, stop = node.saved
    da = np.zeros(shape)
    da[start:stop] = g
    return ((0, da),)


def concat0(a, b):
    da, db = _data(a), _data(b)
    return _emit("concat0", np.concatenate([da, db], axis=0), (a, b), (da.shape[0],))


@backward_rule("concat0")
def _concat0_bwd(node, g):
    n = node.saved[0]
    return ((0, g[:n]), (1, g[n:]))


def reshape(a, shape):
    da = _data(a)
    return _emit("reshape", da.reshape(shape), (a,), (da.shape,))


@backward_rule("reshape")
def _reshape_bwd(node, g):
    return ((0, g.reshape(node.saved[0])),)


def transpose(a, axes):
    da = _data(a)
    return _emit("transpose", np.ascontiguousarray(da.transpose(axes)), (a,), (axes,))


@backward_rule("transpose")
def _transpose_bwd(node, g):
    axes = node.saved[0]
    inv = tuple(np.argsort(axes))
    return ((0, np.ascontiguousarray(g.transpose(inv))),)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a):
    da = _data(a)
    return _emit("sum_all", np.asarray(da.sum()), (a,), (da.shape,))


@backward_rule("sum_all")
def _sum_all_bwd(node, g):
    return ((0, np.broadcast_to(g, node.saved[0]).copy()),)


def mean_all(a):
    da = _data(a)
    return _emit("mean_all", np.asarray(da.mean()), (a,), (da.shape, da.size))


@backward_rule("mean_all")
def _mean_all_bwd(node, g):
    shape, n = node.saved
    return ((0, np.broadcast_to(g / n, shape).copy()),)
