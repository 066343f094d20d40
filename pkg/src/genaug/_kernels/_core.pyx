# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: row softmax / log-softmax, layer norm, causal
attention, each with forward and backward. Mirrors fallback.py.

Reductions accumulate left to right so results are reproducible run to run.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


def softmax_fwd(const double[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((r, c))
    cdef double[:, ::1] p = out
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(r):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            p[i, j] = exp(x[i, j] - m)
            s += p[i, j]
        for j in range(c):
            p[i, j] /= s
    return out


def softmax_bwd(const double[:, ::1] p, const double[:, ::1] dout):
    cdef Py_ssize_t r = p.shape[0], c = p.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((r, c))
    cdef double[:, ::1] dx = out
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(r):
        s = 0.0
        for j in range(c):
            s += p[i, j] * dout[i, j]
        for j in range(c):
            dx[i, j] = p[i, j] * (dout[i, j] - s)
    return out


def log_softmax_fwd(const double[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((r, c))
    cdef double[:, ::1] lp = out
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(r):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            s += exp(x[i, j] - m)
        s = log(s)
        for j in range(c):
            lp[i, j] = x[i, j] - m - s
    return out


def log_softmax_bwd(const double[:, ::1] lp, const double[:, ::1] dout):
    cdef Py_ssize_t r = lp.shape[0], c = lp.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((r, c))
    cdef double[:, ::1] dx = out
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(r):
        s = 0.0
        for j in range(c):
            s += dout[i, j]
        for j in range(c):
            dx[i, j] = dout[i, j] - exp(lp[i, j]) * s
    return out


def layernorm_fwd(const double[:, ::1] x, const double[::1] g, const double[::1] b, double eps):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] yout = np.empty((r, c))
    cdef cnp.ndarray[double, ndim=1] muout = np.empty(r)
    cdef cnp.ndarray[double, ndim=1] rstdout = np.empty(r)
    cdef double[:, ::1] y = yout
    cdef double[::1] mu = muout, rstd = rstdout
    cdef Py_ssize_t i, j
    cdef double m, v, d
    for i in range(r):
        m = 0.0
        for j in range(c):
            m += x[i, j]
        m /= c
        v = 0.0
        for j in range(c):
            d = x[i, j] - m
            v += d * d
        v /= c
        mu[i] = m
        rstd[i] = 1.0 / sqrt(v + eps)
        for j in range(c):
            y[i, j] = (x[i, j] - m) * rstd[i] * g[j] + b[j]
    return yout, muout, rstdout


def layernorm_bwd(const double[:, ::1] x, const double[::1] g, const double[::1] mu,
                  const double[::1] rstd, const double[:, ::1] dout):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] dxout = np.empty((r, c))
    cdef cnp.ndarray[double, ndim=1] dgout = np.zeros(c)
    cdef cnp.ndarray[double, ndim=1] dbout = np.zeros(c)
    cdef double[:, ::1] dx = dxout
    cdef double[::1] dg = dgout, db = dbout
    cdef Py_ssize_t i, j
    cdef double xhat, dxhat, m1, m2
    for i in range(r):
        m1 = 0.0
        m2 = 0.0
        for j in range(c):
            xhat = (x[i, j] - mu[i]) * rstd[i]
            dxhat = dout[i, j] * g[j]
            dg[j] += dout[i, j] * xhat
            db[j] += dout[i, j]
            m1 += dxhat
            m2 += dxhat * xhat
        m1 /= c
        m2 /= c
        for j in range(c):
            xhat = (x[i, j] - mu[i]) * rstd[i]
            dxhat = dout[i, j] * g[j]
            dx[i, j] = rstd[i] * (dxhat - m1 - xhat * m2)
    return dxout, dgout, dbout


def attn_fwd(const double[:, :, ::1] q, const double[:, :, ::1] k, const double[:, :, ::1] v):
    cdef Py_ssize_t h = q.shape[0], tq = q.shape[1], d = q.shape[2]
    cdef Py_ssize_t tk = k.shape[1]
    cdef Py_ssize_t offset = tk - tq
    cdef double scale = 1.0 / sqrt(<double> d)
    cdef cnp.ndarray[double, ndim=3] oarr = np.zeros((h, tq, d))
    cdef cnp.ndarray[double, ndim=3] parr = np.zeros((h, tq, tk))
    cdef double[:, :, ::1] out = oarr
    cdef double[:, :, ::1] probs = parr
    cdef Py_ssize_t a, i, j, e, lim
    cdef double m, s, sc
    for a in range(h):
        for i in range(tq):
            lim = offset + i + 1
            m = -1e300
            for j in range(lim):
                sc = 0.0
                for e in range(d):
                    sc += q[a, i, e] * k[a, j, e]
                sc *= scale
                probs[a, i, j] = sc
                if sc > m:
                    m = sc
            s = 0.0
            for j in range(lim):
                probs[a, i, j] = exp(probs[a, i, j] - m)
                s += probs[a, i, j]
            for j in range(lim):
                probs[a, i, j] /= s
                for e in range(d):
                    out[a, i, e] += probs[a, i, j] * v[a, j, e]
    return oarr, parr


def attn_bwd(const double[:, :, ::1] q, const double[:, :, ::1] k, const double[:, :, ::1] v,
             const double[:, :, ::1] probs, const double[:, :, ::1] dout):
    cdef Py_ssize_t h = q.shape[0], tq = q.shape[1], d = q.shape[2]
    cdef Py_ssize_t tk = k.shape[1]
    cdef Py_ssize_t offset = tk - tq
    cdef double scale = 1.0 / sqrt(<double> d)
    cdef cnp.ndarray[double, ndim=3] dqarr = np.zeros((h, tq, d))
    cdef cnp.ndarray[double, ndim=3] dkarr = np.zeros((h, tk, d))
    cdef cnp.ndarray[double, ndim=3] dvarr = np.zeros((h, tk, d))
    cdef double[:, :, ::1] dq = dqarr, dk = dkarr, dv = dvarr
    cdef cnp.ndarray[double, ndim=1] drow_arr = np.empty(tk)
    cdef double[::1] drow = drow_arr
    cdef Py_ssize_t a, i, j, e, lim
    cdef double s, ds
    for a in range(h):
        for i in range(tq):
            lim = offset + i + 1
            s = 0.0
            for j in range(lim):
                drow[j] = 0.0
                for e in range(d):
                    drow[j] += dout[a, i, e] * v[a, j, e]
                s += probs[a, i, j] * drow[j]
            for j in range(lim):
                ds = probs[a, i, j] * (drow[j] - s)
                for e in range(d):
                    dq[a, i, e] += ds * k[a, j, e] * scale
                    dk[a, j, e] += ds * q[a, i, e] * scale
                    dv[a, j, e] += probs[a, i, j] * dout[a, i, e]
    return dqarr, dkarr, dvarr
