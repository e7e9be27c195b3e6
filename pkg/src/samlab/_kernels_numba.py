"""numba-compiled twins of ``_kernels_numpy``.

Loops are written row by row so each kernel makes a single pass over memory.
Results agree with the numpy path to rounding, not bit for bit.
"""

import math

import numpy as np
from numba import njit

_opts = dict(cache=True, nogil=True)


@njit(**_opts)
def softmax_rows(x):
    n, k = x.shape
    out = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(k):
            out[i, j] *= inv
    return out


@njit(**_opts)
def log_softmax_rows(x):
    n, k = x.shape
    out = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            s += math.exp(x[i, j] - m)
        lse = math.log(s)
        for j in range(k):
            out[i, j] = x[i, j] - m - lse
    return out


@njit(**_opts)
def softmax_rows_backward(p, dy):
    n, k = p.shape
    out = np.empty_like(p)
    for i in range(n):
        dot = 0.0
        for j in range(k):
            dot += dy[i, j] * p[i, j]
        for j in range(k):
            out[i, j] = p[i, j] * (dy[i, j] - dot)
    return out


@njit(**_opts)
def layernorm_rows(x, eps):
    n, k = x.shape
    xhat = np.empty_like(x)
    rstd = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(k):
            mu += x[i, j]
        mu /= k
        var = 0.0
        for j in range(k):
            d = x[i, j] - mu
            var += d * d
        var /= k
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for j in range(k):
            xhat[i, j] = (x[i, j] - mu) * r
    return xhat, rstd


@njit(**_opts)
def layernorm_rows_backward(dxhat, xhat, rstd):
    n, k = xhat.shape
    out = np.empty_like(xhat)
    for i in range(n):
        md = 0.0
        mdx = 0.0
        for j in range(k):
            md += dxhat[i, j]
            mdx += dxhat[i, j] * xhat[i, j]
        md /= k
        mdx /= k
        for j in range(k):
            out[i, j] = (dxhat[i, j] - md - xhat[i, j] * mdx) * rstd[i]
    return out


@njit(**_opts)
def cross_entropy_rows(logits, labels):
    n, k = logits.shape
    nll = np.empty(n)
    probs = np.empty_like(logits)
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, k):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(k):
            s += math.exp(logits[i, j] - m)
        lse = math.log(s)
        for j in range(k):
            probs[i, j] = math.exp(logits[i, j] - m - lse)
        nll[i] = -(logits[i, labels[i]] - m - lse)
    return nll, probs


@njit(**_opts)
def scatter_add_rows(index, rows, n_out):
    out = np.zeros((n_out, rows.shape[1]))
    for i in range(index.shape[0]):
        r = index[i]
        for j in range(rows.shape[1]):
            out[r, j] += rows[i, j]
    return out


@njit(**_opts)
def _two_basin_grad_scalar(x, a_s, c_s, a_f, c_f, delta, temp):
    f_s = 0.5 * a_s * (x - c_s) ** 2
    f_f = 0.5 * a_f * (x - c_f) ** 2 + delta
    m = min(f_s, f_f)
    w_s = math.exp(-(f_s - m) / temp)
    w_f = math.exp(-(f_f - m) / temp)
    return (w_s * a_s * (x - c_s) + w_f * a_f * (x - c_f)) / (w_s + w_f)


@njit(**_opts)
def two_basin_descend(x0, steps, lr, rho, a_s, c_s, a_f, c_f, delta, temp):
    out = np.empty(x0.shape[0])
    for i in range(x0.shape[0]):
        x = x0[i]
        for _ in range(steps):
            g = _two_basin_grad_scalar(x, a_s, c_s, a_f, c_f, delta, temp)
            if rho > 0.0 and g != 0.0:
                s = 1.0 if g > 0.0 else -1.0
                g = _two_basin_grad_scalar(x + rho * s, a_s, c_s, a_f, c_f, delta, temp)
            x = x - lr * g
        out[i] = x
    return out


@njit(**_opts)
def quadratic_sam_orbit(x0, lr, curvature, rho, steps):
    out = np.empty(steps + 1)
    x = x0
    out[0] = x
    for t in range(steps):
        s = 0.0
        if x > 0.0:
            s = 1.0
        elif x < 0.0:
            s = -1.0
        x = x - lr * (curvature * (x + rho * s))
        out[t + 1] = x
    return out


@njit(**_opts)
def adafactor_factored(g, row, col, decay, eps):
    r, c = g.shape
    keep = 1.0 - decay
    for i in range(r):
        s = 0.0
        for j in range(c):
            s += g[i, j] * g[i, j]
        row[i] = decay * row[i] + keep * (s / c)
    for j in range(c):
        s = 0.0
        for i in range(r):
            s += g[i, j] * g[i, j]
        col[j] = decay * col[j] + keep * (s / r)
    denom = 0.0
    for i in range(r):
        denom += row[i]
    denom /= r
    out = np.empty_like(g)
    for i in range(r):
        for j in range(c):
            v = row[i] * col[j] / denom if denom > 0.0 else 0.0
            out[i, j] = g[i, j] / math.sqrt(v + eps)
    return out
