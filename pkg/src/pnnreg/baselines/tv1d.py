"""Exact 1-D total-variation denoising (fused lasso signal approximator).

Direct non-iterative algorithm of Condat (2013): solves
``min_x 1/2 ||y - x||^2 + lam * sum |x_{i+1} - x_i|`` in a single pass with
occasional backtracking.
"""

from __future__ import annotations

import numpy as np


def tv1d_denoise(y, lam: float) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    out = np.empty(n)
    if n == 0:
        return out
    if lam <= 0:
        out[:] = y
        return out
    yl = y.tolist()
    res = [0.0] * n
    k = k0 = kplus = kminus = 0
    umin, umax = lam, -lam
    vmin, vmax = yl[0] - lam, yl[0] + lam
    twolam, minlam = 2.0 * lam, -lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                while True:
                    res[k0] = vmin
                    k0 += 1
                    if k0 > kminus:
                        break
                k = kminus = k0
                vmin = yl[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    res[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = kplus = k0
                vmax = yl[k0]
                umax = minlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                for j in range(k0, k + 1):
                    res[j] = vmin
                out[:] = res
                return out
        umin += yl[k + 1] - vmin
        if umin < minlam:
            while True:
                res[k0] = vmin
                k0 += 1
                if k0 > kminus:
                    break
            k = kplus = kminus = k0
            vmin = yl[k0]
            vmax = vmin + twolam
            umin, umax = lam, minlam
            continue
        umax += yl[k + 1] - vmax
        if umax > lam:
            while True:
                res[k0] = vmax
                k0 += 1
                if k0 > kplus:
                    break
            k = kplus = kminus = k0
            vmax = yl[k0]
            vmin = vmax - twolam
            umin, umax = lam, minlam
            continue
        k += 1
        if umin >= lam:
            kminus = k
            vmin += (umin - lam) / (kminus - k0 + 1)
            umin = lam
        if umax <= minlam:
            kplus = k
            vmax += (umax + lam) / (kplus - k0 + 1)
            umax = minlam
