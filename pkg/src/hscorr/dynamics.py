"""Event-driven hard-sphere flow in whole space.

Particles stream freely and undergo elastic binary collisions at distance
epsilon. Backward flow is forward flow of the velocity-reversed state.
Pairs can be made transparent (they pass through each other) through a
boolean ``interacting`` matrix; this is how the unsymmetric Enskog and the
Boltzmann pseudo-dynamics reuse the same engine.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CollisionCapExceeded, NotInContactError
from .geometry import ray_min_distance, scatter

FORWARD = "forward"
BACKWARD = "backward"

CONTACT_TOL = 1e-9
GAP_RTOL = 1e-9
ROOT_RTOL = 1e-12
DEFAULT_MAX_COLLISIONS = 10**6


def _direction_sign(direction: str) -> float:
    if direction == FORWARD:
        return 1.0
    if direction == BACKWARD:
        return -1.0
    raise ValueError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class PhaseState:
    """Ordered list of s particles (x_i, v_i) in R^d with sphere diameter epsilon."""

    x: np.ndarray
    v: np.ndarray
    epsilon: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float, ndmin=2)
        v = np.array(self.v, dtype=float, ndmin=2)
        if x.shape != v.shape or x.ndim != 2:
            raise ValueError(f"x and v must both have shape (s, d); got {x.shape}, {v.shape}")
        if x.shape[1] not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {x.shape[1]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("phase state entries must be finite")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def empty(cls, d: int, epsilon: float) -> "PhaseState":
        return cls(np.zeros((0, d)), np.zeros((0, d)), epsilon)

    @property
    def s(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.s

    def energy(self) -> float:
        return 0.5 * float(np.sum(self.v * self.v))

    def momentum(self) -> np.ndarray:
        return self.v.sum(axis=0)

    def min_separation(self) -> float:
        if self.s < 2:
            return np.inf
        iu, ju = np.triu_indices(self.s, 1)
        return float(np.min(np.linalg.norm(self.x[ju] - self.x[iu], axis=1)))

    def is_valid(self, tol: float = CONTACT_TOL) -> bool:
        return self.min_separation() >= self.epsilon - tol

    def stream(self, t: float) -> "PhaseState":
        """Free streaming X + V t (no collisions)."""
        return PhaseState(self.x + self.v * t, self.v, self.epsilon)

    def take(self, idx) -> "PhaseState":
        idx = np.asarray(idx, dtype=int)
        return PhaseState(self.x[idx].reshape(-1, self.d), self.v[idx].reshape(-1, self.d), self.epsilon)

    def append(self, x, v) -> "PhaseState":
        return PhaseState(np.vstack([self.x, np.reshape(x, (1, self.d))]),
                          np.vstack([self.v, np.reshape(v, (1, self.d))]), self.epsilon)

    def with_velocities(self, v) -> "PhaseState":
        return PhaseState(self.x, v, self.epsilon)

    def with_epsilon(self, epsilon: float) -> "PhaseState":
        return PhaseState(self.x, self.v, epsilon)

    def allclose(self, other: "PhaseState", atol: float) -> bool:
        return (self.x.shape == other.x.shape
                and np.allclose(self.x, other.x, rtol=0, atol=atol)
                and np.allclose(self.v, other.v, rtol=0, atol=atol))

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "x": self.x.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseState":
        return cls(np.asarray(d["x"], dtype=float), np.asarray(d["v"], dtype=float), d["epsilon"])


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    pair: tuple[int, int]
    omega: np.ndarray

    def to_dict(self) -> dict:
        return {"time": self.time, "i": self.pair[0], "j": self.pair[1], "omega": self.omega.tolist()}


@dataclass
class FlowLog:
    events: list[CollisionEvent] = field(default_factory=list)

    @property
    def collision_count(self) -> int:
        return len(self.events)


def contact_times(dx: np.ndarray, dv: np.ndarray, epsilon: float) -> np.ndarray:
    """Earliest time >= 0 at which |dx + dv t| reaches epsilon while closing.

    dx, dv have shape (n, d). Returns +inf where no contact occurs, including
    tangential (zero-discriminant) and receding pairs.
    """
    b = np.einsum("ij,ij->i", dx, dv)
    vv = np.einsum("ij,ij->i", dv, dv)
    rr = np.einsum("ij,ij->i", dx, dx)
    c = rr - epsilon * epsilon
    disc = b * b - vv * c
    closing = b < -ROOT_RTOL * np.sqrt(rr * vv)
    ok = closing & (disc > ROOT_RTOL * b * b) & (vv > 0.0)
    t = np.full(b.shape, np.inf)
    if np.any(ok):
        root = c[ok] / (-b[ok] + np.sqrt(disc[ok]))
        t[ok] = np.maximum(root, 0.0)
    return t


def _interaction_mask(interacting, s: int) -> Optional[np.ndarray]:
    if interacting is None:
        return None
    mask = np.asarray(interacting, dtype=bool)
    if mask.shape != (s, s):
        raise ValueError(f"interacting matrix must be {s}x{s}")
    return mask


def next_event(state: PhaseState, direction: str = FORWARD, interacting=None):
    """Earliest contact of the flow in the given direction.

    Returns None or (dt, (i, j), omega) with i < j and omega the unit vector
    from i to j at contact.
    """
    sign = _direction_sign(direction)
    s = state.s
    if s < 2 or state.epsilon == 0.0:
        return None
    mask = _interaction_mask(interacting, s)
    iu, ju = np.triu_indices(s, 1)
    if mask is not None:
        keep = mask[iu, ju]
        iu, ju = iu[keep], ju[keep]
        if iu.size == 0:
            return None
    dx = state.x[ju] - state.x[iu]
    dv = sign * (state.v[ju] - state.v[iu])
    t = contact_times(dx, dv, state.epsilon)
    k = int(np.argmin(t))
    if not np.isfinite(t[k]):
        return None
    rel = dx[k] + dv[k] * t[k]
    return float(t[k]), (int(iu[k]), int(ju[k])), rel / np.linalg.norm(rel)


class _EventEngine:
    """Priority-queue event loop with per-particle collision counters for invalidation."""

    def __init__(self, x, v, epsilon, mask, max_collisions):
        self.x = x
        self.v = v
        self.eps = epsilon
        self.mask = mask
        self.max_collisions = max_collisions
        self.s = x.shape[0]
        self.counts = np.zeros(self.s, dtype=np.int64)
        self.now = 0.0
        self.heap: list = []

    def _push_pairs(self, iu, ju, t_end):
        if self.mask is not None:
            keep = self.mask[iu, ju]
            iu, ju = iu[keep], ju[keep]
        if iu.size == 0:
            return
        dt = contact_times(self.x[ju] - self.x[iu], self.v[ju] - self.v[iu], self.eps)
        when = self.now + dt
        for k in np.nonzero(np.isfinite(when) & (when <= t_end))[0]:
            i, j = int(iu[k]), int(ju[k])
            heapq.heappush(self.heap, (float(when[k]), i, j, int(self.counts[i]), int(self.counts[j])))

    def _push_rows(self, p, t_end):
        others = np.delete(np.arange(self.s), p)
        iu = np.minimum(others, p)
        ju = np.maximum(others, p)
        self._push_pairs(iu, ju, t_end)

    def run(self, t_end, on_event=None):
        if self.s < 2 or self.eps == 0.0:
            return 0
        iu, ju = np.triu_indices(self.s, 1)
        self._push_pairs(iu, ju, t_end)
        n_events = 0
        while self.heap:
            when, i, j, ci, cj = heapq.heappop(self.heap)
            if self.counts[i] != ci or self.counts[j] != cj:
                continue
            self.x += self.v * (when - self.now)
            self.now = when
            d = self.x[j] - self.x[i]
            r = np.linalg.norm(d)
            omega = d / r
            corr = 0.5 * (self.eps - r) * omega
            self.x[i] -= corr
            self.x[j] += corr
            self.v[i], self.v[j] = scatter(self.v[i], self.v[j], omega)
            self.counts[i] += 1
            self.counts[j] += 1
            n_events += 1
            if n_events > self.max_collisions:
                raise CollisionCapExceeded(
                    f"more than {self.max_collisions} collisions; pathological configuration")
            if on_event is not None:
                on_event(when, i, j, omega)
            self._push_rows(i, t_end)
            self._push_rows(j, t_end)
        return n_events


def flow(state: PhaseState, t: float, direction: str = FORWARD, *, interacting=None,
         max_collisions: int = DEFAULT_MAX_COLLISIONS) -> tuple[PhaseState, FlowLog]:
    """Advance a state by time t >= 0 in the given direction.

    Returns the evolved state and the log of collisions, with event times
    measured as elapsed time in the flow direction.
    """
    if not np.isfinite(t) or t < 0:
        raise ValueError("flow time must be finite and nonnegative")
    sign = _direction_sign(direction)
    log = FlowLog()
    if t == 0.0:
        return state, log
    mask = _interaction_mask(interacting, state.s)
    eng = _EventEngine(state.x.copy(), sign * state.v, state.epsilon, mask, max_collisions)
    if mask is None or mask.any():
        eng.run(t, lambda when, i, j, w: log.events.append(CollisionEvent(when, (i, j), w.copy())))
    x = eng.x + eng.v * (t - eng.now)
    return PhaseState(x, sign * eng.v, state.epsilon), log


@dataclass(frozen=True)
class BackwardHistory:
    """Piecewise-free backward trajectory of a state.

    ``times[r]`` is the backward time of the r-th event (times[0] = 0) and
    ``x[r], v[r]`` the state just after it, in forward-time velocity
    convention, so the state at backward time tau in segment r is
    ``x[r] - v[r] * (tau - times[r])``.
    """

    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    epsilon: float

    @property
    def n_events(self) -> int:
        return len(self.times) - 1

    def snapshot(self, r: int) -> PhaseState:
        return PhaseState(self.x[r], self.v[r], self.epsilon)

    def segment_end(self, r: int) -> float:
        return float(self.times[r + 1]) if r + 1 < len(self.times) else np.inf

    def segment_index(self, tau) -> np.ndarray:
        return np.searchsorted(self.times, tau, side="right") - 1

    def state_at(self, tau: float) -> PhaseState:
        r = int(self.segment_index(tau))
        return PhaseState(self.x[r] - self.v[r] * (tau - self.times[r]), self.v[r], self.epsilon)

    def particle_at(self, i: int, tau) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised (x_i, v_i) at backward times tau."""
        tau = np.asarray(tau, dtype=float)
        r = self.segment_index(tau)
        v = self.v[r, i]
        x = self.x[r, i] - v * (tau - self.times[r])[..., None]
        return x, v


def backward_history(state: PhaseState, *, interacting=None,
                     max_collisions: int = DEFAULT_MAX_COLLISIONS) -> BackwardHistory:
    """Flow backward until no further contact is possible, recording each event."""
    mask = _interaction_mask(interacting, state.s)
    eng = _EventEngine(state.x.copy(), -state.v, state.epsilon, mask, max_collisions)
    times, xs, vs = [0.0], [state.x.copy()], [state.v.copy()]

    def record(when, i, j, w):
        times.append(when)
        # store positions at the event time and velocities in forward convention
        xs.append(eng.x.copy())
        vs.append(-eng.v.copy())

    if mask is None or mask.any():
        # the callback runs after the scatter, before rows are recomputed
        eng.run(np.inf, record)
    return BackwardHistory(np.asarray(times), np.asarray(xs), np.asarray(vs), state.epsilon)


def boundary_involution(state: PhaseState, pair: tuple[int, int], tol: float = CONTACT_TOL) -> PhaseState:
    """Apply the collision map to a pair at contact; an involution."""
    i, j = pair
    d = state.x[j] - state.x[i]
    r = np.linalg.norm(d)
    if abs(r - state.epsilon) > tol:
        raise NotInContactError(f"pair {pair} is at distance {r}, not {state.epsilon}")
    omega = d / r
    v = state.v.copy()
    v[i], v[j] = scatter(v[i], v[j], omega)
    return state.with_velocities(v)


def clearance(epsilon: float) -> float:
    """Threshold for "stays epsilon-clear"; pairs created exactly at contact must pass despite rounding."""
    return epsilon * (1.0 - GAP_RTOL)


def pairwise_backward_gaps(state: PhaseState) -> np.ndarray:
    """Minimum future separation of every pair under free backward streaming."""
    if state.s < 2:
        return np.zeros(0)
    iu, ju = np.triu_indices(state.s, 1)
    return ray_min_distance(state.x[iu] - state.x[ju], state.v[iu] - state.v[ju]).reshape(-1)


def is_free_backward(state: PhaseState) -> bool:
    """True iff no pair ever comes closer than epsilon under backward free streaming."""
    if state.s < 2:
        return True
    return bool(np.all(pairwise_backward_gaps(state) >= clearance(state.epsilon)))


def pair_colliding_backward(p1, normal, v1, v2, tau_c: float, epsilon: float) -> PhaseState:
    """Two particles whose backward flow reaches contact at backward time tau_c.

    At backward time tau_c particle 2 sits at p1 + epsilon * normal; v1, v2 are
    the velocities at time 0 and must satisfy normal.(v2 - v1) > 0 so the pair
    approaches in backward time.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if n @ (v2 - v1) <= 0:
        raise ValueError("velocities must separate the pair in forward time")
    p1 = np.asarray(p1, dtype=float)
    x1 = p1 + v1 * tau_c
    x2 = p1 + epsilon * n + v2 * tau_c
    return PhaseState(np.array([x1, x2]), np.array([v1, v2]), epsilon)
