"""Deterministic quadrature oracles, written independently of the Monte Carlo estimators.

Everything here is d = 2: velocities on a tensor grid, directions on a
uniform angle grid (exact for periodic integrands up to the kink of the
positive part), times by Gauss-Legendre.
"""
import numpy as np


def q_grid(f, x, v, half_width=7.0, n_v=160, n_w=192):
    """Gain minus loss collision integral at (x, v) by tensor-grid quadrature."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    g = np.linspace(-half_width, half_width, n_v)
    h = g[1] - g[0]
    v1 = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    ang = 2 * np.pi * np.arange(n_w) / n_w
    w = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    total = 0.0
    xs = np.broadcast_to(x, (v1.shape[0], 2))
    vs = np.broadcast_to(v, (v1.shape[0], 2))
    loss_f = f(xs, vs) * f(xs, v1)
    for om in w:
        c = (v1 - v) @ om
        cp = np.maximum(c, 0.0)
        vstar = v + np.outer(c, om)
        v1star = v1 - np.outer(c, om)
        total += np.sum(cp * (f(xs, vstar) * f(xs, v1star) - loss_f))
    return total * h * h * (2 * np.pi / n_w)


def picard_first_order(f0, x, v, t, ell=1.0, n_t=6, n_v=100, n_w=128):
    """ell^-1 int_0^t Q(T(t1) f0, T(t1) f0)(x - v (t - t1), v) dt1 with T(t1) f(x, v) = f(x - v t1, v)."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    nodes, weights = np.polynomial.legendre.leggauss(n_t)
    t1 = 0.5 * t * (nodes + 1.0)
    total = 0.0
    for tt, ww in zip(t1, weights):
        def transported(xx, vv, tt=tt):
            return f0(xx - vv * tt, vv)
        total += 0.5 * t * ww * q_grid(transported, x - v * (t - tt), v, n_v=n_v, n_w=n_w)
    return total / ell


def free_transport(f0, x, v, t):
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    return float(f0(x - v * t, v))
