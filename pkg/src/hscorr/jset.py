"""Particle deletion and the finite set of forward-projected single-particle states.

The set is built by interleaving backward flows and deletions down to one
particle, then projecting that particle forward by the total elapsed time.
Between consecutive backward events the projected points do not change, so
each segment of a backward history is represented by its left endpoint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import PhaseState, backward_history, is_free_backward
from .errors import JSetCapExceeded, PreconditionError

DEDUP_TOL = 1e-7
MAX_POINTS = 10_000


def delete(state: PhaseState, k: int) -> PhaseState:
    """Remove the k-th entry (0-based) of the ordered particle list."""
    if not 0 <= k < state.s:
        raise IndexError(f"cannot delete entry {k} from a list of {state.s} particles")
    keep = np.arange(state.s) != k
    return PhaseState(state.x[keep], state.v[keep], state.epsilon)


@dataclass(frozen=True)
class JSet:
    """Deduplicated single-particle states with their top-level time horizon.

    A point belongs to the set built from the backward-flowed state
    psi^{-tau} Z (after shifting it back by tau) exactly when ``horizon > tau``.
    """

    x: np.ndarray
    v: np.ndarray
    horizon: np.ndarray
    dedup_tol: float = DEDUP_TOL

    def __len__(self) -> int:
        return self.x.shape[0]

    def points(self) -> np.ndarray:
        return np.hstack([self.x, self.v])

    def at_backward_time(self, tau: float) -> tuple[np.ndarray, np.ndarray]:
        """Points of the set of psi^{-tau} Z, expressed at backward time tau."""
        keep = self.horizon > tau
        return self.x[keep] - self.v[keep] * tau, self.v[keep]

    def contains(self, x, v, tol: float | None = None) -> bool:
        tol = self.dedup_tol if tol is None else tol
        z = np.concatenate([np.asarray(x, float), np.asarray(v, float)])
        return bool(np.any(np.linalg.norm(self.points() - z, axis=1) <= tol))


def _dedup(pts: np.ndarray, horizon: np.ndarray, tol: float):
    kept: list[int] = []
    hz: list[float] = []
    for n in range(pts.shape[0]):
        if kept:
            dist = np.linalg.norm(pts[kept] - pts[n], axis=1)
            hit = np.nonzero(dist <= tol)[0]
            if hit.size:
                k = int(hit[0])
                hz[k] = max(hz[k], horizon[n])
                continue
        kept.append(n)
        hz.append(horizon[n])
    return pts[kept], np.asarray(hz)


def jset(state: PhaseState, *, dedup_tol: float = DEDUP_TOL, max_points: int = MAX_POINTS) -> JSet:
    """Enumerate the forward-projected single-particle states of a configuration."""
    if state.s < 1:
        raise PreconditionError("the set is defined for s >= 1")
    d = state.d
    out_x: list[np.ndarray] = []
    out_v: list[np.ndarray] = []
    out_h: list[float] = []

    def emit(x, v, t_acc, h):
        out_x.append(x + v * t_acc)
        out_v.append(v)
        out_h.extend([h] * x.shape[0])
        if len(out_h) > max_points:
            raise JSetCapExceeded(f"more than {max_points} points emitted; collision cascade too deep")

    def visit(sub: PhaseState, t_acc: float, h: float, top: bool):
        if sub.s == 1 or is_free_backward(sub):
            # a backward-free state stays free after any deletion
            emit(sub.x, sub.v, t_acc, h)
            return
        hist = backward_history(sub)
        for r in range(len(hist.times)):
            tau_r = float(hist.times[r])
            snap = hist.snapshot(r)
            hr = min(h, hist.segment_end(r)) if top else h
            for k in range(sub.s):
                visit(delete(snap, k), t_acc + tau_r, hr, False)

    visit(state, 0.0, np.inf, True)
    pts = np.hstack([np.vstack(out_x), np.vstack(out_v)])
    pts, hz = _dedup(pts, np.asarray(out_h), dedup_tol)
    return JSet(pts[:, :d].copy(), pts[:, d:].copy(), hz, dedup_tol)
