"""Backward pseudo-trajectories with particle creations, for three hierarchies.

bbgky      full hard-sphere flow at diameter epsilon, N * epsilon^(d-1) = 1/ell
enskog     only pairs inside the first m-1 particles collide during flow; all
           other pairs pass through each other; creations always scatter
boltzmann  diameter zero, free flow

At each creation the new particle is placed at x_i + epsilon * omega. The
impact factor c = omega . (v_new - v_i) is multiplied into a signed kernel;
when c > 0 the pair is replaced by its scattered velocities so that the pair
recedes under the backward flow, which realises the gain minus loss split of
the collision operator as a single signed integrand.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np

from .dynamics import BACKWARD, FlowLog, PhaseState, contact_times, flow
from .errors import InvalidCreationError, PreconditionError
from .geometry import as_unit, scatter

BBGKY = "bbgky"
ENSKOG = "enskog"
BOLTZMANN = "boltzmann"


@dataclass(frozen=True)
class HierarchyKind:
    variant: str
    ell: float
    d: int = 2
    N: int | None = None
    epsilon: float = 0.0
    m: int | None = None

    def __post_init__(self):
        if self.variant not in (BBGKY, ENSKOG, BOLTZMANN):
            raise ValueError(f"unknown hierarchy {self.variant!r}")
        if self.ell <= 0:
            raise ValueError("mean free path must be positive")
        if self.variant == BBGKY:
            if self.N is None or self.N < 1:
                raise ValueError("BBGKY needs a particle number N >= 1")
            target = 1.0 / self.ell
            got = self.N * self.epsilon ** (self.d - 1)
            if abs(got - target) > 1e-12 * max(1.0, target):
                raise ValueError(f"Boltzmann-Grad scaling violated: N eps^(d-1) = {got}, 1/ell = {target}")
        if self.variant == ENSKOG and (self.m is None or self.m < 1):
            raise ValueError("Enskog hierarchy needs m >= 1")

    @classmethod
    def bbgky(cls, N: int, d: int = 2, ell: float = 1.0) -> "HierarchyKind":
        eps = (N * ell) ** (-1.0 / (d - 1))
        # recompute ell from eps so the scaling holds to rounding
        return cls(BBGKY, 1.0 / (N * eps ** (d - 1)), d, N, eps, None)

    @classmethod
    def bbgky_at(cls, epsilon: float, d: int = 2, ell: float = 1.0) -> "HierarchyKind":
        """BBGKY kind at a prescribed diameter; N is rounded and ell adjusted to keep the scaling exact."""
        N = max(1, round(1.0 / (ell * epsilon ** (d - 1))))
        return cls(BBGKY, 1.0 / (N * epsilon ** (d - 1)), d, N, epsilon, None)

    @classmethod
    def enskog(cls, epsilon: float, m: int, d: int = 2, ell: float = 1.0) -> "HierarchyKind":
        return cls(ENSKOG, ell, d, None, epsilon, m)

    @classmethod
    def boltzmann(cls, d: int = 2, ell: float = 1.0) -> "HierarchyKind":
        return cls(BOLTZMANN, ell, d, None, 0.0, None)

    @property
    def diameter(self) -> float:
        return 0.0 if self.variant == BOLTZMANN else self.epsilon

    def interacting(self, n: int):
        """Pair interaction matrix for n particles; None means all pairs interact."""
        if self.variant == BBGKY:
            return None
        mask = np.zeros((n, n), dtype=bool)
        if self.variant == ENSKOG:
            h = min(self.m - 1, n)
            mask[:h, :h] = True
            np.fill_diagonal(mask, False)
        return mask

    def to_dict(self) -> dict:
        return {"variant": self.variant, "ell": self.ell, "d": self.d, "N": self.N,
                "epsilon": self.epsilon, "m": self.m}


@dataclass(frozen=True)
class CreationSpec:
    """Creation times t > t_1 > ... > t_k >= 0 with velocities, directions and parents.

    Parent indices are 0-based: the j-th creation (0-based j) attaches to a
    particle in range(s + j).
    """

    t: float
    times: tuple[float, ...] = ()
    velocities: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    omegas: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    indices: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(a) for a in self.times))
        object.__setattr__(self, "indices", tuple(int(a) for a in self.indices))
        k = len(self.times)
        vel = np.asarray(self.velocities, dtype=float).reshape(k, -1) if k else np.asarray(self.velocities, float)
        om = np.asarray(self.omegas, dtype=float).reshape(k, -1) if k else np.asarray(self.omegas, float)
        if k:
            om = as_unit(om)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "omegas", om)
        if not (len(vel) == len(om) == len(self.indices) == k):
            raise ValueError("creation lists must all have length k")

    @property
    def k(self) -> int:
        return len(self.times)

    def validate(self, s: int) -> None:
        prev = self.t
        for j, tj in enumerate(self.times):
            if not (0.0 <= tj <= prev) or (j > 0 and tj == prev):
                raise PreconditionError(f"creation times must decrease within [0, t]; got {self.times}")
            prev = tj
            if not 0 <= self.indices[j] < s + j:
                raise PreconditionError(f"creation {j} attaches to {self.indices[j]}, outside range({s + j})")

    def shifted(self, tau: float) -> "CreationSpec":
        return CreationSpec(self.t + tau, tuple(a + tau for a in self.times), self.velocities,
                            self.omegas, self.indices)

    def extended(self, v_new, omega_new, i_new: int, t_new: float = 0.0) -> "CreationSpec":
        d = np.asarray(v_new).shape[-1]
        return CreationSpec(self.t, self.times + (t_new,),
                            np.vstack([self.velocities.reshape(-1, d), np.reshape(v_new, (1, d))]),
                            np.vstack([self.omegas.reshape(-1, d), np.reshape(omega_new, (1, d))]),
                            self.indices + (i_new,))

    def to_dict(self) -> dict:
        return {"t": self.t, "times": list(self.times), "velocities": self.velocities.tolist(),
                "omegas": self.omegas.tolist(), "indices": list(self.indices)}

    @classmethod
    def from_dict(cls, d: dict) -> "CreationSpec":
        return cls(d["t"], tuple(d["times"]), np.asarray(d["velocities"], float),
                   np.asarray(d["omegas"], float), tuple(d["indices"]))


@dataclass(frozen=True)
class PseudoTrajectory:
    final_state: PhaseState
    kernel: float
    logs: tuple[FlowLog, ...]
    signs: tuple[int, ...]


def _check_overlap(state: PhaseState, x_new: np.ndarray, parent: int, kind: HierarchyKind) -> None:
    if kind.variant != BBGKY or state.s < 2:
        return
    dist = np.linalg.norm(state.x - x_new, axis=1)
    dist[parent] = np.inf
    if np.any(dist <= kind.epsilon):
        raise InvalidCreationError("created particle overlaps an existing particle")


def build(Z_s: PhaseState, spec: CreationSpec, kind: HierarchyKind) -> PseudoTrajectory:
    """Construct the pseudo-trajectory endpoint at time 0 and its signed kernel."""
    spec.validate(Z_s.s)
    eps = kind.diameter
    state = Z_s if Z_s.epsilon == eps else Z_s.with_epsilon(eps)
    now = spec.t
    kernel = 1.0
    logs = []
    signs = []
    for j in range(spec.k):
        state, log = flow(state, now - spec.times[j], BACKWARD, interacting=kind.interacting(state.s))
        logs.append(log)
        now = spec.times[j]
        i = spec.indices[j]
        w = spec.omegas[j]
        v_new = spec.velocities[j]
        x_new = state.x[i] + eps * w
        _check_overlap(state, x_new, i, kind)
        c = float(w @ (v_new - state.v[i]))
        kernel *= c
        v = state.v
        if c > 0.0:
            v = v.copy()
            v[i], v_new = scatter(v[i], v_new, w)
            signs.append(1)
        else:
            signs.append(-1 if c < 0 else 0)
        state = PhaseState(np.vstack([state.x, x_new]), np.vstack([v, v_new]), eps)
    state, log = flow(state, now, BACKWARD, interacting=kind.interacting(state.s))
    logs.append(log)
    return PseudoTrajectory(state, kernel, tuple(logs), tuple(signs))


def coefficient(kind: HierarchyKind, s: int, k: int) -> float:
    """Prefactor of the order-k term: a_{N,k,s} for BBGKY, ell^-k otherwise."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if kind.variant == BBGKY:
        if k > kind.N - s:
            raise PreconditionError(f"order {k} exceeds N - s = {kind.N - s}")
        return float(prod(kind.N - s - j for j in range(k))) * kind.epsilon ** (k * (kind.d - 1))
    return kind.ell ** (-k)


@dataclass(frozen=True)
class BatchEndpoints:
    X: np.ndarray
    V: np.ndarray
    kernel: np.ndarray
    valid: np.ndarray
    n_exact: int


def _segment_contacts(X, V, dt, eps, mask) -> np.ndarray:
    """Samples in which some interacting pair reaches contact during a backward segment of length dt."""
    n, s, _ = X.shape
    hit = np.zeros(n, dtype=bool)
    if eps == 0.0 or s < 2:
        return hit
    iu, ju = np.triu_indices(s, 1)
    if mask is not None:
        keep = mask[iu, ju]
        iu, ju = iu[keep], ju[keep]
    for a, b in zip(iu, ju):
        when = contact_times(X[:, b] - X[:, a], -(V[:, b] - V[:, a]), eps)
        hit |= when <= dt
    return hit


def build_batch(Z_s: PhaseState, t: float, times: np.ndarray, velocities: np.ndarray, omegas: np.ndarray,
                indices: np.ndarray, kind: HierarchyKind) -> BatchEndpoints:
    """Endpoints of many pseudo-trajectories sharing Z_s and t.

    Every sample is first streamed freely; samples in which an interacting
    pair meets are recomputed one by one with the exact event-driven build.
    Invalid creations (overlap under BBGKY) get kernel 0 and valid False.
    """
    n, k = np.shape(times)[:2] if np.ndim(times) == 2 else (np.shape(times)[0], 0)
    s, d = Z_s.s, Z_s.d
    eps = kind.diameter
    X = np.broadcast_to(Z_s.x, (n, s, d)).copy()
    V = np.broadcast_to(Z_s.v, (n, s, d)).copy()
    kernel = np.ones(n)
    valid = np.ones(n, dtype=bool)
    redo = np.zeros(n, dtype=bool)
    now = np.full(n, float(t))
    rows = np.arange(n)
    for j in range(k):
        dt = now - times[:, j]
        mask = kind.interacting(s + j)
        redo |= _segment_contacts(X, V, dt, eps, mask)
        X -= V * dt[:, None, None]
        now = times[:, j]
        i = indices[:, j]
        w = omegas[:, j]
        xi, vi = X[rows, i], V[rows, i]
        x_new = xi + eps * w
        v_new = velocities[:, j].copy()
        if kind.variant == BBGKY and s + j >= 2:
            dist = np.linalg.norm(X - x_new[:, None, :], axis=-1)
            dist[rows, i] = np.inf
            valid &= ~np.any(dist <= eps, axis=1)
        c = np.einsum("ij,ij->i", w, v_new - vi)
        kernel *= c
        post = c > 0.0
        vi_star = vi + w * c[:, None]
        V[rows[post], i[post]] = vi_star[post]
        v_new[post] = v_new[post] - w[post] * c[post, None]
        X = np.concatenate([X, x_new[:, None, :]], axis=1)
        V = np.concatenate([V, v_new[:, None, :]], axis=1)
    redo |= _segment_contacts(X, V, now, eps, kind.interacting(s + k))
    X -= V * now[:, None, None]
    redo &= valid
    for r in np.nonzero(redo)[0]:
        spec = CreationSpec(t, tuple(times[r]), velocities[r], omegas[r], tuple(int(a) for a in indices[r]))
        try:
            traj = build(Z_s, spec, kind)
        except InvalidCreationError:
            valid[r] = False
            continue
        X[r], V[r], kernel[r] = traj.final_state.x, traj.final_state.v, traj.kernel
    kernel = np.where(valid, kernel, 0.0)
    return BatchEndpoints(X, V, kernel, valid, int(np.count_nonzero(redo)))
