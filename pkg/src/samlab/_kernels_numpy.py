"""Pure-numpy reference implementations of the hot kernels.

Every function here has a twin with the same signature in
``_kernels_numba``. All arrays are float64 and C-contiguous.
"""

import numpy as np


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_rows_backward(p, dy):
    # d/dx of softmax: p * (dy - <dy, p>)
    return p * (dy - (dy * p).sum(axis=1, keepdims=True))


def layernorm_rows(x, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return xc * rstd, rstd[:, 0].copy()


def layernorm_rows_backward(dxhat, xhat, rstd):
    n = xhat.shape[1]
    mean_d = dxhat.mean(axis=1, keepdims=True)
    mean_dx = (dxhat * xhat).mean(axis=1, keepdims=True)
    return (dxhat - mean_d - xhat * mean_dx) * rstd[:, None]


def cross_entropy_rows(logits, labels):
    """Per-row negative log-likelihood and the softmax probabilities."""
    lsm = log_softmax_rows(logits)
    nll = -lsm[np.arange(logits.shape[0]), labels]
    return nll, np.exp(lsm)


def scatter_add_rows(index, rows, n_out):
    out = np.zeros((n_out, rows.shape[1]))
    np.add.at(out, index, rows)
    return out


def two_basin_grad(x, a_s, c_s, a_f, c_f, delta, temp):
    f_s = 0.5 * a_s * (x - c_s) ** 2
    f_f = 0.5 * a_f * (x - c_f) ** 2 + delta
    m = np.minimum(f_s, f_f)
    w_s = np.exp(-(f_s - m) / temp)
    w_f = np.exp(-(f_f - m) / temp)
    z = w_s + w_f
    return (w_s * a_s * (x - c_s) + w_f * a_f * (x - c_f)) / z


def two_basin_descend(x0, steps, lr, rho, a_s, c_s, a_f, c_f, delta, temp):
    """Run (SAM-)gradient descent from each start in ``x0``; rho == 0 is plain GD."""
    x = np.array(x0, dtype=np.float64, copy=True)
    for _ in range(steps):
        g = two_basin_grad(x, a_s, c_s, a_f, c_f, delta, temp)
        if rho > 0.0:
            nz = g != 0.0
            x_adv = np.where(nz, x + rho * np.sign(g), x)
            g = np.where(nz, two_basin_grad(x_adv, a_s, c_s, a_f, c_f, delta, temp), g)
        x = x - lr * g
    return x


def quadratic_sam_orbit(x0, lr, curvature, rho, steps):
    """Iterate x' = x - lr*curvature*(x + rho*sign(x)); returns the whole orbit."""
    out = np.empty(steps + 1)
    out[0] = x = x0
    for t in range(steps):
        s = 0.0 if x == 0.0 else (1.0 if x > 0.0 else -1.0)
        x = x - lr * (curvature * (x + rho * s))
        out[t + 1] = x
    return out


def adafactor_factored(g, row, col, decay, eps):
    """Update row/col second-moment accumulators in place and return g / sqrt(v_hat + eps)."""
    g2 = g * g
    row *= decay
    row += (1.0 - decay) * g2.mean(axis=1)
    col *= decay
    col += (1.0 - decay) * g2.mean(axis=0)
    denom = row.mean()
    if denom > 0.0:
        v_hat = np.outer(row, col) / denom
    else:
        v_hat = np.zeros_like(g)
    return g / np.sqrt(v_hat + eps)
