"""Direct N-particle experiments: admissible initial data, evolution, marginals, chaos metric.

Marginals are kernel-density estimates averaged over all ordered tuples of
distinct particles, computed exactly through the set-partition
(inclusion-exclusion) formula for sums over injective index maps.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.spatial import cKDTree

from .densities import GaussianProduct, TensorPower
from .dynamics import FORWARD, PhaseState, flow
from .errors import DenseRegimeError, EmptyProbeSetError, NumericAssertionError
from .goodsets import GoodSetParams, energy_below, in_G, in_K, in_U, in_Uhat
from .hierarchy import SeriesQuery, eval_series
from .mc import spawn_generators
from .pseudotraj import HierarchyKind

MIN_ACCEPTANCE = 1e-3
K_VARIANT = "K"
G_VARIANT = "G"


def epsilon_for(N: int, ell: float = 1.0, d: int = 2) -> float:
    """Diameter under the Boltzmann-Grad scaling N eps^(d-1) = 1/ell."""
    return (N * ell) ** (-1.0 / (d - 1))


def default_bandwidth(N: int, d: int = 2, scale: float = 0.5) -> float:
    return scale * N ** (-1.0 / (2 * d + 4))


@dataclass(frozen=True)
class InitialSample:
    state: PhaseState
    attempts: int

    @property
    def acceptance_rate(self) -> float:
        return 1.0 / self.attempts


def has_overlap(x: np.ndarray, epsilon: float) -> bool:
    if epsilon <= 0 or x.shape[0] < 2:
        return False
    return len(cKDTree(x).query_pairs(epsilon)) > 0


def sample_initial(N: int, epsilon: float, data, seed, max_attempts: int | None = None) -> InitialSample:
    """First overlap-free configuration of N i.i.d. particles drawn from data."""
    rng = np.random.default_rng(seed)
    limit = max_attempts if max_attempts is not None else int(round(1.0 / MIN_ACCEPTANCE))
    for attempt in range(1, limit + 1):
        x, v = data.sample(rng, N)
        if not has_overlap(x, epsilon):
            return InitialSample(PhaseState(x, v, epsilon), attempt)
    raise DenseRegimeError(f"no overlap-free configuration in {limit} attempts (acceptance < {1.0 / limit:g}); "
                           f"N = {N}, epsilon = {epsilon:g} is too dense")


def evolve(state: PhaseState, t: float, rtol: float = 1e-8) -> PhaseState:
    """Forward hard-sphere flow with energy and momentum checks."""
    out, _ = flow(state, t, FORWARD)
    e0, e1 = state.energy(), out.energy()
    if abs(e1 - e0) > rtol * max(abs(e0), 1e-300):
        raise NumericAssertionError(f"energy drift {abs(e1 - e0):.3g} over the run")
    p0, p1 = state.momentum(), out.momentum()
    scale = max(np.sum(np.abs(state.v)), 1e-300)
    if np.max(np.abs(p1 - p0)) > rtol * scale:
        raise NumericAssertionError("momentum drift over the run")
    return out


@lru_cache(maxsize=None)
def _partitions(s: int) -> tuple:
    """Set partitions of range(s) with their Moebius weights prod (-1)^(|B|-1) (|B|-1)!."""
    def gen(items):
        if not items:
            yield []
            return
        first, rest = items[0], items[1:]
        for part in gen(rest):
            for n in range(len(part)):
                yield part[:n] + [[first] + part[n]] + part[n + 1:]
            yield [[first]] + part
    out = []
    for part in gen(list(range(s))):
        mu = math.prod((-1) ** (len(b) - 1) * math.factorial(len(b) - 1) for b in part)
        out.append((tuple(tuple(b) for b in part), mu))
    return tuple(out)


def injective_sum(A: np.ndarray) -> float:
    """sum over injective maps p -> i of prod_p A[p, i], for A of shape (s, N)."""
    s = A.shape[0]
    total = 0.0
    for part, mu in _partitions(s):
        total += mu * math.prod(float(np.sum(np.prod(A[list(b)], axis=0))) for b in part)
    return total


def _kernel_matrix(state: PhaseState, probe: PhaseState, h: float) -> np.ndarray:
    d = state.d
    dx = probe.x[:, None, :] - state.x[None, :, :]
    dv = probe.v[:, None, :] - state.v[None, :, :]
    r2 = np.sum(dx * dx, axis=-1) + np.sum(dv * dv, axis=-1)
    return np.exp(-0.5 * r2 / (h * h)) / (2.0 * math.pi * h * h) ** d


def marginal_per_replica(states, probe: PhaseState, bandwidth: float) -> np.ndarray:
    """Symmetrised KDE of the s-marginal at the probe, one value per replica."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    s = probe.s
    out = []
    for st in states:
        if st.s < s:
            raise ValueError("replica has fewer particles than the probe")
        A = _kernel_matrix(st, probe, bandwidth)
        tuples = math.perm(st.s, s)
        out.append(injective_sum(A) / tuples)
    return np.asarray(out)


def estimate_marginal(states, s: int, probe: PhaseState, bandwidth: float) -> tuple[float, float]:
    if probe.s != s:
        raise ValueError(f"probe has {probe.s} particles, expected {s}")
    vals = marginal_per_replica(states, probe, bandwidth)
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), se


def probe_is_good(probe: PhaseState, variant: str, m_prime: int, params: GoodSetParams, R: float) -> bool:
    Z = probe.with_epsilon(params.epsilon)
    if not energy_below(Z, R * R):
        return False
    if variant == K_VARIANT:
        return in_K(Z) and in_U(Z, params.eta)
    if variant == G_VARIANT:
        return in_G(Z, m_prime) and in_Uhat(Z, params.eta)
    raise ValueError(f"unknown variant {variant!r}")


@dataclass(frozen=True)
class ChaosResult:
    metric: float
    stderr: float
    probe_count: int
    argmax: int
    differences: tuple

    def to_dict(self) -> dict:
        return {"metric": self.metric, "stderr": self.stderr, "probe_count": self.probe_count,
                "argmax": self.argmax, "differences": list(self.differences)}


def chaos_metric(states_t, m_prime: int, s: int, probes, params: GoodSetParams, reference, bandwidth: float,
                 variant: str = G_VARIANT, R: float = 3.0) -> ChaosResult:
    """Max over good probes of |f^(s) - f^(m'-1) prod reference| (G) or |f^(s) - prod reference| (K).

    ``reference(x, v)`` is a single-particle density evaluated pointwise.
    The difference is linear in the per-replica estimates, so its stderr is
    the replica spread of the per-replica differences at the maximising probe.
    """
    kept = [p for p in probes if p.s == s and probe_is_good(p, variant, m_prime, params, R)]
    if not kept:
        raise EmptyProbeSetError(f"no probe with {s} particles lies in the {variant} good set")
    h = m_prime - 1 if variant == G_VARIANT else 0
    if variant == G_VARIANT and not 1 <= h < s:
        raise ValueError("the G variant needs 1 <= m' - 1 < s")
    diffs, ses = [], []
    for probe in kept:
        joint = marginal_per_replica(states_t, probe, bandwidth)
        ref = math.prod(float(reference(probe.x[n], probe.v[n])) for n in range(h, s))
        if h:
            head = marginal_per_replica(states_t, probe.take(range(h)), bandwidth)
            D = joint - head * ref
        else:
            D = joint - ref
        diffs.append(float(D.mean()))
        ses.append(float(D.std(ddof=1) / math.sqrt(len(D))) if len(D) > 1 else 0.0)
    a = int(np.argmax(np.abs(diffs)))
    return ChaosResult(abs(diffs[a]), ses[a], len(kept), a, tuple(diffs))


class SeriesReference:
    """Single-particle f(t) from the Boltzmann series on tensorised data, cached per point."""

    def __init__(self, base, t: float, ell: float = 1.0, k_max: int = 2, n_mc: int = 20000, seed: int = 0):
        self.base = base
        self.t = t
        self.kind = HierarchyKind.boltzmann(base.d, ell)
        self.k_max = k_max
        self.n_mc = n_mc
        self.seed = seed
        self._cache: dict = {}

    def __call__(self, x, v) -> float:
        key = tuple(np.round(np.concatenate([np.asarray(x, float), np.asarray(v, float)]), 12))
        if key not in self._cache:
            Z = PhaseState(np.atleast_2d(x), np.atleast_2d(v), 0.0)
            q = SeriesQuery(self.kind, 1, Z, self.t, self.k_max, self.n_mc, self.seed)
            self._cache[key] = eval_series(q, TensorPower(self.base)).total
        return self._cache[key]


def run_replicas(N: int, ell: float, d: int, data, t: float, replicas: int, seed) -> list[PhaseState]:
    eps = epsilon_for(N, ell, d)
    out = []
    for rng in spawn_generators(seed, replicas):
        init = sample_initial(N, eps, data, rng)
        out.append(evolve(init.state, t) if t > 0 else init.state)
    return out


def generate_probes(variant: str, m_prime: int, s: int, count: int, data, params: GoodSetParams, R: float,
                    seed, max_tries: int = 100_000) -> list[PhaseState]:
    """Rejection-sample probe points from the data law until they lie in the requested good set."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(max_tries):
        x, v = data.sample(rng, s)
        p = PhaseState(x, v, params.epsilon)
        if p.min_separation() > params.epsilon and probe_is_good(p, variant, m_prime, params, R):
            out.append(p)
            if len(out) == count:
                return out
    raise EmptyProbeSetError(f"found only {len(out)} of {count} probes")


# frozen probe sets: generated once at the largest diameter of the default sweep
PROBE_SETTINGS = {"N": 64, "ell": 1.0, "d": 2, "kappa": 0.5, "R": 3.0, "count": 12, "seed": 20240601,
                  "sets": [[K_VARIANT, 2, 2], [G_VARIANT, 3, 3]]}


def default_data(d: int = 2) -> GaussianProduct:
    return GaussianProduct(1.0, (0.0,) * d, 1.0)


def build_default_probes() -> dict:
    cfg = PROBE_SETTINGS
    eps = epsilon_for(cfg["N"], cfg["ell"], cfg["d"])
    params = GoodSetParams.from_chaoticity(2, eps, cfg["kappa"], cfg["R"])
    out = {"settings": cfg, "probes": {}}
    for n, (variant, m_prime, s) in enumerate(cfg["sets"]):
        ps = generate_probes(variant, m_prime, s, cfg["count"], default_data(cfg["d"]), params, cfg["R"],
                             [cfg["seed"], n])
        out["probes"][f"{variant}:{m_prime}:{s}"] = [p.to_dict() for p in ps]
    return out


def load_probes(variant: str, m_prime: int, s: int) -> list[PhaseState]:
    text = resources.files("hscorr").joinpath("data/probes.json").read_text()
    blob = json.loads(text)
    return [PhaseState.from_dict(p) for p in blob["probes"][f"{variant}:{m_prime}:{s}"]]
