"""Membership predicates for the good sets on which factorization is tested.

``in_G``      tail particles (index >= m-1, 0-based) stay epsilon-clear of
              every projected state of the first m-1 particles and of each
              other under backward streaming.
``in_Uhat``   all distinct projected states have velocity gaps above eta.
``in_K``      the whole configuration streams freely backward.
``in_U``      all particle velocity gaps exceed eta.

Conditions written with ">=" count ties as success, those written with ">"
count ties as failure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import PhaseState, clearance, is_free_backward
from .geometry import ray_min_distance
from .jset import JSet, jset


@dataclass(frozen=True)
class GoodSetParams:
    m: int
    eta: float
    epsilon: float
    R: float
    kappa: float = 0.5

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if self.eta <= 0 or self.epsilon < 0 or self.R <= 0:
            raise ValueError("eta and R must be positive, epsilon nonnegative")
        if self.eta >= self.R:
            raise ValueError("eta must be below R")

    @classmethod
    def from_chaoticity(cls, m: int, epsilon: float, kappa: float, R: float) -> "GoodSetParams":
        """eta tied to the diameter as eta = epsilon**kappa."""
        return cls(m=m, eta=epsilon**kappa, epsilon=epsilon, R=R, kappa=kappa)


def in_G(state: PhaseState, m: int, head_jset: JSet | None = None) -> bool:
    s = state.s
    h = m - 1
    if s <= h:
        return True
    eps = clearance(state.epsilon)
    tx, tv = state.x[h:], state.v[h:]
    if h > 0:
        J = head_jset if head_jset is not None else jset(state.take(range(h)))
        gaps = ray_min_distance(tx[:, None, :] - J.x[None, :, :], tv[:, None, :] - J.v[None, :, :])
        if np.any(np.asarray(gaps) < eps):
            return False
    if tx.shape[0] > 1:
        iu, ju = np.triu_indices(tx.shape[0], 1)
        gaps = ray_min_distance(tx[iu] - tx[ju], tv[iu] - tv[ju])
        if np.any(np.asarray(gaps) < eps):
            return False
    return True


def velocity_gaps(v: np.ndarray) -> np.ndarray:
    if v.shape[0] < 2:
        return np.zeros(0)
    iu, ju = np.triu_indices(v.shape[0], 1)
    return np.linalg.norm(v[iu] - v[ju], axis=1)


def in_Uhat(state: PhaseState, eta: float, J: JSet | None = None) -> bool:
    J = J if J is not None else jset(state)
    return bool(np.all(velocity_gaps(J.v) > eta))


def in_K(state: PhaseState) -> bool:
    return is_free_backward(state)


def in_U(state: PhaseState, eta: float) -> bool:
    return bool(np.all(velocity_gaps(state.v) > eta))


def energy_below(state: PhaseState, bound: float) -> bool:
    """E_s = (1/2) sum |v_i|^2 <= bound."""
    return state.energy() <= bound


def in_good(state: PhaseState, m: int, eta: float) -> bool:
    """Membership in G_{s|m} intersected with Uhat^eta."""
    return in_G(state, m) and in_Uhat(state, eta)
