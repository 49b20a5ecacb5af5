"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np

from pnnreg.pnn import backward, loss_weight_decay


def finite_difference_errors(net, xs, ys, lam, h=1e-5):
    """Worst relative deviation of :func:`backward` from central differences.

    Coordinates where both values are below 1e-8 are compared absolutely.
    """
    grads = backward(net, xs, ys, lam).parameters()
    worst = 0.0
    for P, G in zip(net.parameters(), grads):
        flat, gflat = P.reshape(-1), G.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_weight_decay(net, xs, ys, lam)
            flat[i] = old - h
            down = loss_weight_decay(net, xs, ys, lam)
            flat[i] = old
            fd = (up - down) / (2 * h)
            scale = max(abs(fd), abs(gflat[i]))
            err = abs(fd - gflat[i]) if scale < 1e-8 else abs(fd - gflat[i]) / scale
            worst = max(worst, err)
    return worst


def dense_trend_filter(y, lam, m, iters=200000, tol=1e-13):
    """FISTA on the dual of ``0.5||y - t||^2 + lam ||D t||_1`` with dense matrices."""
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    D = np.eye(n)
    for _ in range(m + 1):
        D = np.diff(D, axis=0)
    L = np.linalg.norm(D @ D.T, 2)
    u = np.zeros(D.shape[0])
    z, t = u.copy(), 1.0
    for _ in range(iters):
        g = D @ (D.T @ z - y)
        u_new = np.clip(z - g / L, -lam, lam)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = u_new + (t - 1) / t_new * (u_new - u)
        if np.max(np.abs(u_new - u)) < tol:
            u = u_new
            break
        u, t = u_new, t_new
    return y - D.T @ u
