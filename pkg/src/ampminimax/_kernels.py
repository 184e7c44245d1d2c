"""Compiled inner loops: pool-adjacent-violators and the 1-D total-variation prox."""
import numpy as np
from numba import njit


@njit(cache=True)
def pav_inplace(y, out, w_buf, v_buf, n_buf):
    # stack of blocks: value, weight, count
    nb = 0
    for i in range(y.shape[0]):
        v_buf[nb] = y[i]
        w_buf[nb] = 1.0
        n_buf[nb] = 1
        nb += 1
        while nb > 1 and v_buf[nb - 2] > v_buf[nb - 1]:
            w = w_buf[nb - 2] + w_buf[nb - 1]
            v_buf[nb - 2] = (w_buf[nb - 2] * v_buf[nb - 2] + w_buf[nb - 1] * v_buf[nb - 1]) / w
            w_buf[nb - 2] = w
            n_buf[nb - 2] += n_buf[nb - 1]
            nb -= 1
    k = 0
    for b in range(nb):
        for _ in range(n_buf[b]):
            out[k] = v_buf[b]
            k += 1
    return nb


@njit(cache=True)
def pav(y):
    n = y.shape[0]
    out = np.empty(n)
    pav_inplace(y, out, np.empty(n), np.empty(n), np.empty(n, np.int64))
    return out


@njit(cache=True)
def pav_rows_sqnorm(Z):
    """Row-wise isotonic fit of each row of Z; returns the squared norm of each fit."""
    m, n = Z.shape
    out = np.empty(n)
    w = np.empty(n)
    v = np.empty(n)
    c = np.empty(n, np.int64)
    res = np.empty(m)
    for r in range(m):
        pav_inplace(Z[r], out, w, v, c)
        s = 0.0
        for i in range(n):
            s += out[i] * out[i]
        res[r] = s
    return res


@njit(cache=True)
def tv_prox_inplace(y, lam, out):
    # Condat's direct algorithm for argmin 0.5|y-x|^2 + lam * sum |x_{i+1}-x_i|
    width = y.shape[0]
    if width == 0:
        return
    if lam <= 0.0:
        for i in range(width):
            out[i] = y[i]
        return
    k = 0
    k0 = 0
    umin = lam
    umax = -lam
    vmin = y[0] - lam
    vmax = y[0] + lam
    kplus = 0
    kminus = 0
    twolam = 2.0 * lam
    minlam = -lam
    while True:
        while k == width - 1:
            if umin < 0.0:
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > kminus:
                        break
                k = k0
                kminus = k0
                vmin = y[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kplus = k0
                vmax = y[k0]
                umax = minlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > k:
                        break
                return
        umin += y[k + 1] - vmin
        if umin < minlam:
            while True:
                out[k0] = vmin
                k0 += 1
                if k0 > kminus:
                    break
            k = k0
            kplus = k0
            kminus = k0
            vmin = y[k0]
            vmax = vmin + twolam
            umin = lam
            umax = minlam
        else:
            umax += y[k + 1] - vmax
            if umax > lam:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kplus = k0
                kminus = k0
                vmax = y[k0]
                vmin = vmax - twolam
                umin = lam
                umax = minlam
            else:
                k += 1
                if umin >= lam:
                    kminus = k
                    vmin += (umin - lam) / (kminus - k0 + 1)
                    umin = lam
                if umax <= minlam:
                    kplus = k
                    vmax += (umax + lam) / (kplus - k0 + 1)
                    umax = minlam


@njit(cache=True)
def tv_prox(y, lam):
    out = np.empty(y.shape[0])
    tv_prox_inplace(y, lam, out)
    return out


@njit(cache=True)
def tv_rows_sqerr(Z, lam, s1, s2, mu_shift):
    """TV prox of each row of Z after a boundary tilt; returns squared norm of the fit.

    The tilt subtracts lam*s1 from the first entry and lam*s2 from the last,
    which is the prox of the penalty augmented by the boundary linear term.
    """
    m, n = Z.shape
    yb = np.empty(n)
    out = np.empty(n)
    res = np.empty(m)
    for r in range(m):
        for i in range(n):
            yb[i] = Z[r, i]
        yb[0] -= lam * s1
        yb[n - 1] -= lam * s2
        tv_prox_inplace(yb, lam, out)
        s = 0.0
        for i in range(n):
            d = out[i] - mu_shift
            s += d * d
        res[r] = s
    return res


@njit(cache=True)
def count_segments(x):
    n = x.shape[0]
    if n == 0:
        return 0
    c = 1
    for i in range(1, n):
        if x[i] != x[i - 1]:
            c += 1
    return c
