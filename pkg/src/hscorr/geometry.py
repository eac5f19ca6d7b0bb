"""Vector algebra, ray distances, the collision/reflection maps and sphere sampling.

All functions accept plain sequences or numpy arrays and broadcast over
leading axes; the last axis holds the d components (d = 2 or 3).
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import gamma

from .mc import MCEstimate

UNIT_TOL = 1e-12


def as_vec(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector components must be finite")
    return arr


def as_unit(omega) -> np.ndarray:
    """Renormalise a direction; rejects the zero vector."""
    w = as_vec(omega)
    n = np.linalg.norm(w, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("zero vector has no direction")
    return w / n


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / gamma(d / 2)


def ball_volume(d: int, radius: float = 1.0) -> float:
    return math.pi ** (d / 2) / gamma(d / 2 + 1) * radius**d


def ray_min_distance(dx, dv):
    """inf over tau >= 0 of |dx - dv * tau|, in closed form.

    Broadcasts over leading axes and returns a float for 1-D input.
    """
    dx = np.asarray(dx, dtype=float)
    dv = np.asarray(dv, dtype=float)
    vv = np.sum(dv * dv, axis=-1)
    xv = np.sum(dx * dv, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = np.where(vv > 0.0, np.maximum(xv, 0.0) / np.where(vv > 0.0, vv, 1.0), 0.0)
    gap = dx - dv * tau[..., None]
    out = np.linalg.norm(gap, axis=-1)
    return float(out) if out.ndim == 0 else out


def scatter(v, v1, omega):
    """Hard-sphere collision map for the pair (v, v1) with impact direction omega.

    Returns (v + w w.(v1 - v), v1 - w w.(v1 - v)). The map is an involution
    and conserves momentum and kinetic energy.
    """
    v = np.asarray(v, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    w = np.asarray(omega, dtype=float)
    c = np.sum(w * (v1 - v), axis=-1, keepdims=True)
    return v + w * c, v1 - w * c


def reflect_direction(v, omega) -> np.ndarray:
    """u = |v|^-1 (2 w w.v - v); a diffeomorphism on the hemisphere w.v > 0."""
    v = as_vec(v)
    w = np.asarray(omega, dtype=float)
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(speed == 0.0):
        raise ValueError("reflect_direction needs a nonzero velocity")
    return (2.0 * w * np.sum(w * v, axis=-1, keepdims=True) - v) / speed


def reflect_direction_inverse(v, u) -> np.ndarray:
    """Inverse of reflect_direction on the hemisphere w.v > 0.

    The point u = -v/|v| has no preimage and raises ValueError.
    """
    v = as_vec(v)
    vhat = v / np.linalg.norm(v, axis=-1, keepdims=True)
    s = np.asarray(u, dtype=float) + vhat
    n = np.linalg.norm(s, axis=-1, keepdims=True)
    if np.any(n <= UNIT_TOL):
        raise ValueError("u = -v/|v| is excluded from the image of the reflection map")
    return s / n


def sample_sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """n directions uniform on the unit sphere S^{d-1}."""
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_ball(rng: np.random.Generator, n: int, d: int, radius: float = 1.0) -> np.ndarray:
    """n points uniform in the closed ball of given radius."""
    r = radius * rng.random(n) ** (1.0 / d)
    return sample_sphere(rng, n, d) * r[:, None]


def distance_to_line(points, line_point, line_dir) -> np.ndarray:
    p = np.asarray(points, dtype=float) - np.asarray(line_point, dtype=float)
    e = as_unit(line_dir)
    along = np.sum(p * e, axis=-1, keepdims=True)
    return np.linalg.norm(p - along * e, axis=-1)


def cylinder_cap_measure(line_point, line_dir, rho: float, n_samples: int, seed=None) -> MCEstimate:
    """Monte Carlo surface measure of {w in S^{d-1} : dist(w, L) <= rho}.

    The estimate's ``mean`` is the hit fraction and ``volume`` the sphere area.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    if rho <= 0:
        raise ValueError("rho must be positive")
    line_point = as_vec(line_point)
    d = line_point.shape[-1]
    rng = np.random.default_rng(seed)
    w = sample_sphere(rng, n_samples, d)
    hits = int(np.count_nonzero(distance_to_line(w, line_point, line_dir) <= rho))
    return MCEstimate.from_counts(hits, n_samples, sphere_area(d))


def tangent_line(d: int, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """A line tangent to the unit sphere; a fixed one when rng is None."""
    if rng is None:
        p = np.zeros(d)
        p[-1] = 1.0
        e = np.zeros(d)
        e[0] = 1.0
        return p, e
    p = sample_sphere(rng, 1, d)[0]
    g = rng.standard_normal(d)
    g -= (g @ p) * p
    return p, g / np.linalg.norm(g)


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
