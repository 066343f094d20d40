"""Pure-NumPy implementations of the hot kernels.

Same signatures and math as the compiled extension (``_core.pyx``); used
when the extension is not built or when GENAUG_KERNELS=py is set. All
arrays are float64 and C-contiguous.
"""

import numpy as np


def softmax_fwd(x: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax. x (R, C) -> p (R, C)."""
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(p: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """dx = p * (dout - sum(p * dout)) per row."""
    s = (p * dout).sum(axis=-1, keepdims=True)
    return p * (dout - s)


def log_softmax_fwd(x: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax: x - max - log(sum(exp(x - max)))."""
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return x - m - np.log(e.sum(axis=-1, keepdims=True))


def log_softmax_bwd(lp: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """dx = dout - exp(lp) * sum(dout) per row."""
    s = dout.sum(axis=-1, keepdims=True)
    return dout - np.exp(lp) * s


def layernorm_fwd(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float):
    """Row-wise layer norm. Returns (y, mean, rstd) with mean/rstd per row."""
    mu = x.mean(axis=-1)
    var = ((x - mu[:, None]) ** 2).mean(axis=-1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mu[:, None]) * rstd[:, None] * g + b
    return y, mu, rstd


def layernorm_bwd(x, g, mu, rstd, dout):
    """Backward of layernorm_fwd. Returns (dx, dg, db)."""
    xhat = (x - mu[:, None]) * rstd[:, None]
    dg = (dout * xhat).sum(axis=0)
    db = dout.sum(axis=0)
    dxhat = dout * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def attn_fwd(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    """Causal multi-head attention with leading context positions.

    q (H, Tq, D), k/v (H, Tk, D) with Tk >= Tq. Query i may attend to key
    j <= (Tk - Tq) + i, i.e. the first Tk - Tq positions (prefix/context)
    are visible to every query. Returns (out (H, Tq, D), probs (H, Tq, Tk)).
    """
    h, tq, d = q.shape
    tk = k.shape[1]
    offset = tk - tq
    scale = 1.0 / np.sqrt(d)
    scores = np.einsum("hid,hjd->hij", q, k) * scale
    jj = np.arange(tk)[None, :]
    ii = np.arange(tq)[:, None]
    scores = np.where(jj > offset + ii, -np.inf, scores)
    probs = softmax_fwd(scores)
    out = np.einsum("hij,hjd->hid", probs, v)
    return out, probs


def attn_bwd(q, k, v, probs, dout):
    """Backward of attn_fwd. Returns (dq, dk, dv)."""
    d = q.shape[2]
    scale = 1.0 / np.sqrt(d)
    dprobs = np.einsum("hid,hjd->hij", dout, v)
    # softmax backward per row; masked entries have probs == 0 so drop out
    s = (probs * dprobs).sum(axis=-1, keepdims=True)
    dscores = probs * (dprobs - s)
    dq = np.einsum("hij,hjd->hid", dscores, k) * scale
    dk = np.einsum("hij,hid->hjd", dscores, q) * scale
    dv = np.einsum("hij,hid->hjd", probs, dout)
    return dq, dk, dv
