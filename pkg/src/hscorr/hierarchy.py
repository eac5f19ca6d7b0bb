"""Collision-operator quadratures and Monte Carlo evaluation of truncated Duhamel series.

Every estimator samples creation velocities from a Gaussian proposal with
variance 2/beta around the data's velocity mean, so importance weights stay
bounded against Maxwellian-type data.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .densities import PartialTensor, TensorPower, single_proposal
from .dynamics import BACKWARD, PhaseState, flow
from .errors import PreconditionError
from .geometry import sample_sphere, sphere_area
from .mc import MCEstimate, spawn_generators
from .pseudotraj import BBGKY, ENSKOG, HierarchyKind, build_batch, coefficient

C_PLUS, C_MINUS, CT_PLUS, CT_MINUS = "C_plus", "C_minus", "Ctilde_plus", "Ctilde_minus"
COLLISION_OPS = (C_PLUS, C_MINUS, CT_PLUS, CT_MINUS)
MAX_ORDER = 4
MAX_PARTICLES = 8


def _gaussian_velocities(rng: np.random.Generator, shape, mean, beta: float):
    """Draw from N(mean, (2/beta) I) and return the draws with their proposal density."""
    d = np.size(mean)
    sigma2 = 2.0 / beta
    z = rng.standard_normal(tuple(shape) + (d,))
    v = np.asarray(mean) + math.sqrt(sigma2) * z
    q = np.exp(-0.5 * np.sum(z * z, axis=-1)) / (2.0 * math.pi * sigma2) ** (d / 2)
    return v, q


def eval_Q(f, x, v, n_quad: int, seed) -> MCEstimate:
    """Gain minus loss of the Boltzmann collision integral at (x, v)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    d = x.shape[0]
    rng = np.random.default_rng(seed)
    mean, beta = single_proposal(f, d)
    v1, q = _gaussian_velocities(rng, (n_quad,), mean, beta)
    w = sample_sphere(rng, n_quad, d)
    c = np.einsum("ij,ij->i", w, v1 - v)
    cp = np.maximum(c, 0.0)
    v_star = v + w * c[:, None]
    v1_star = v1 - w * c[:, None]
    xs = np.broadcast_to(x, v1.shape)
    vs = np.broadcast_to(v, v1.shape)
    integrand = cp * (f(xs, v_star) * f(xs, v1_star) - f(xs, vs) * f(xs, v1))
    return MCEstimate.from_samples(integrand * sphere_area(d) / q)


def eval_collision_op(op: str, i: int, g, Z_s: PhaseState, epsilon: float, n_quad: int, seed,
                      proposal=None) -> MCEstimate:
    """One term C^{+-}_{i,s+1} or Ctilde^{+-}_{i,s+1} applied to an (s+1)-particle density g.

    The C operators act on densities supported in the hard-sphere domain, so
    configurations where the created particle overlaps some other particle
    contribute zero; the Ctilde operators carry no such restriction.
    """
    if op not in COLLISION_OPS:
        raise ValueError(f"unknown operator {op!r}; expected one of {COLLISION_OPS}")
    if not 0 <= i < Z_s.s:
        raise ValueError(f"index {i} outside range({Z_s.s})")
    d = Z_s.d
    rng = np.random.default_rng(seed)
    mean, beta = proposal if proposal is not None else single_proposal(g, d)
    vn, q = _gaussian_velocities(rng, (n_quad,), mean, beta)
    w = sample_sphere(rng, n_quad, d)
    c = np.einsum("ij,ij->i", w, vn - Z_s.v[i])
    X = np.broadcast_to(Z_s.x, (n_quad, Z_s.s, d))
    V = np.broadcast_to(Z_s.v, (n_quad, Z_s.s, d)).copy()
    x_new = Z_s.x[i] + epsilon * w
    if op in (C_PLUS, CT_PLUS):
        weight = np.maximum(c, 0.0)
        V[:, i] = Z_s.v[i] + w * c[:, None]
        vn = vn - w * c[:, None]
    else:
        weight = np.maximum(-c, 0.0)
    Xf = np.concatenate([X, x_new[:, None, :]], axis=1)
    Vf = np.concatenate([V, vn[:, None, :]], axis=1)
    val = weight * g(Xf, Vf)
    if op in (C_PLUS, C_MINUS) and Z_s.s > 1 and epsilon > 0:
        dist = np.linalg.norm(Z_s.x[None, :, :] - x_new[:, None, :], axis=-1)
        dist[:, i] = np.inf
        val = np.where(np.all(dist > epsilon, axis=1), val, 0.0)
    return MCEstimate.from_samples(val * sphere_area(d) / q)


@dataclass(frozen=True)
class SeriesQuery:
    kind: HierarchyKind
    s: int
    Z_s: PhaseState
    t: float
    k_max: int
    n_mc: int
    seed: int

    def __post_init__(self):
        if self.Z_s.s != self.s:
            raise ValueError(f"Z_s has {self.Z_s.s} particles, query says {self.s}")
        if self.t < 0:
            raise ValueError("t must be nonnegative")
        if not 0 <= self.k_max <= MAX_ORDER:
            raise ValueError(f"k_max must lie in 0..{MAX_ORDER}")
        if self.s + self.k_max > MAX_PARTICLES:
            raise ValueError(f"s + k_max must not exceed {MAX_PARTICLES}")
        if self.n_mc < 2:
            raise ValueError("n_mc must be at least 2")
        if self.kind.variant == BBGKY and self.k_max > self.kind.N - self.s:
            raise PreconditionError(f"k_max = {self.k_max} exceeds N - s = {self.kind.N - self.s}")
        if self.kind.variant == ENSKOG and self.s < self.kind.m - 1:
            raise PreconditionError("the unsymmetric hierarchy is defined for s >= m - 1")


@dataclass(frozen=True)
class SeriesResult:
    orders: tuple[MCEstimate, ...]
    magnitudes: tuple[float, ...]
    query: SeriesQuery = field(repr=False)

    @property
    def total(self) -> float:
        return sum(e.mean for e in self.orders)

    @property
    def total_stderr(self) -> float:
        return math.sqrt(sum(e.stderr**2 for e in self.orders))

    def truncated(self, k: int) -> tuple[float, float]:
        parts = self.orders[: k + 1]
        return sum(e.mean for e in parts), math.sqrt(sum(e.stderr**2 for e in parts))

    def to_records(self) -> list[dict]:
        q = self.query
        return [{"kind": q.kind.variant, "s": q.s, "k": k, "t": q.t, "estimate": e.mean, "stderr": e.stderr,
                 "magnitude": self.magnitudes[k], "point": q.Z_s.to_dict()} for k, e in enumerate(self.orders)]


@dataclass(frozen=True)
class CreationDraws:
    """Kind-independent random inputs for one order, reused across hierarchies (common random numbers)."""

    times: np.ndarray
    parent_u: np.ndarray
    omegas: np.ndarray
    z: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, n: int, k: int, d: int) -> "CreationDraws":
        times = -np.sort(-rng.random((n, k)), axis=1)
        parent_u = rng.random((n, k))
        omegas = sample_sphere(rng, n * k, d).reshape(n, k, d)
        z = rng.standard_normal((n, k, d))
        return cls(times, parent_u, omegas, z)


def _order_estimate(q: SeriesQuery, data, k: int, draws: CreationDraws) -> tuple[MCEstimate, float]:
    s, d, t = q.s, q.Z_s.d, q.t
    mean, beta = single_proposal(data, d)
    sigma2 = 2.0 / beta
    vel = np.asarray(mean) + math.sqrt(sigma2) * draws.z
    log_q = -0.5 * np.sum(draws.z**2, axis=-1) - 0.5 * d * math.log(2.0 * math.pi * sigma2)
    inv_q = np.exp(-np.sum(log_q, axis=1))
    sizes = np.arange(s, s + k)
    indices = np.minimum((draws.parent_u * sizes).astype(int), sizes - 1)
    volume = t**k / math.factorial(k) * float(np.prod(sizes)) * sphere_area(d) ** k
    ends = build_batch(q.Z_s, t, t * draws.times, vel, draws.omegas, indices, q.kind)
    vals = coefficient(q.kind, s, k) * volume * ends.kernel * inv_q * data(ends.X, ends.V)
    vals = np.where(ends.valid, vals, 0.0)
    return MCEstimate.from_samples(vals), float(np.mean(np.abs(vals)))


def eval_series(q: SeriesQuery, data) -> SeriesResult:
    """Per-order estimates of the truncated Duhamel series for g^{(s)}(t, Z_s)."""
    kind = q.kind
    end, _ = flow(q.Z_s.with_epsilon(kind.diameter), q.t, BACKWARD, interacting=kind.interacting(q.s))
    v0 = float(data(end.x, end.v))
    orders = [MCEstimate(v0, 0.0, 1)]
    mags = [abs(v0)]
    rngs = spawn_generators(q.seed, q.k_max)
    for k in range(1, q.k_max + 1):
        if q.t == 0.0:
            orders.append(MCEstimate(0.0, 0.0, q.n_mc))
            mags.append(0.0)
            continue
        draws = CreationDraws.draw(rngs[k - 1], q.n_mc, k, q.Z_s.d)
        est, mag = _order_estimate(q, data, k, draws)
        orders.append(est)
        mags.append(mag)
    return SeriesResult(tuple(orders), tuple(mags), q)


LANFORD_CONSTANT_NOTE = "C_d = 1 / (e |S^{d-1}| (2 pi)^{d/2})"


def lanford_constant(d: int) -> float:
    return 1.0 / (math.e * sphere_area(d) * (2.0 * math.pi) ** (d / 2))


def lanford_time_proxy(data, d: int, ell: float = 1.0, beta0: float | None = None) -> float:
    """C_d ell e^{mu0} beta0^{(d+1)/2} for tensorised or partially tensorised data.

    e^{-mu0} is the smallest per-particle weighted sup bound: the tail law's
    sup, and for a partial tensor also the head's sup taken to the power
    1/(m-1). beta0 defaults to the data's beta, or beta/2 when drifts make
    the sup at beta infinite.
    """
    tail = data.tail() if hasattr(data, "tail") else data

    def per_particle(b0):
        bound = tail.weighted_sup(b0)
        if isinstance(data, PartialTensor):
            bound = max(bound, data.head.weighted_sup(b0) ** (1.0 / data.head_count))
        return bound

    if beta0 is None:
        # drifting Maxwellians have no finite sup at beta0 = beta; halve it then
        _, beta = single_proposal(tail)
        beta0 = beta if math.isfinite(per_particle(beta)) else beta / 2.0
    bound = per_particle(beta0)
    if not math.isfinite(bound) or bound <= 0:
        raise PreconditionError("data has no finite weighted sup at this beta0")
    return lanford_constant(d) * ell * beta0 ** ((d + 1) / 2) / bound


def geometric_decay(values, ratio_below: float = 1.0) -> bool:
    """True when every consecutive ratio of magnitudes is below the threshold."""
    vals = [abs(a) for a in values]
    return all(b < ratio_below * a for a, b in zip(vals, vals[1:]))


@dataclass(frozen=True)
class FactorizationRow:
    probe: int
    joint: float
    joint_stderr: float
    product: float
    product_stderr: float
    naive_product: float
    difference: float
    combined_stderr: float

    @property
    def z_score(self) -> float:
        if self.combined_stderr == 0:
            return 0.0 if self.difference == 0 else math.inf
        return abs(self.difference) / self.combined_stderr

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["z_score"] = self.z_score
        return out


def _cauchy_product(factors: list[SeriesResult], k_max: int) -> tuple[float, float]:
    """Sum over multi-orders of total degree <= k_max of the product of factor terms, with delta-method stderr."""
    means = [[e.mean for e in f.orders] for f in factors]
    ses = [[e.stderr for e in f.orders] for f in factors]
    r = len(factors)
    total = 0.0
    grad = [[0.0] * (k_max + 1) for _ in range(r)]
    for combo in itertools.product(range(k_max + 1), repeat=r):
        if sum(combo) > k_max:
            continue
        terms = [means[a][combo[a]] for a in range(r)]
        total += math.prod(terms)
        for a in range(r):
            grad[a][combo[a]] += math.prod(terms[:a] + terms[a + 1:])
    var = sum((grad[a][k] * ses[a][k]) ** 2 for a in range(r) for k in range(k_max + 1))
    return total, math.sqrt(var)


def check_partial_factorization(m: int, s: int, t: float, probes, data: PartialTensor, epsilon: float,
                                k_max: int, n_mc: int, seed, ell: float = 1.0) -> list[FactorizationRow]:
    """Compare g^{(s)}(t) with g^{(m-1)}(t) times the single-particle factors at each probe.

    All three series are truncated consistently: the joint series at order
    k_max, the product as a Cauchy product of the factor series with total
    order at most k_max. The naive product of separately truncated factors
    is reported alongside.
    """
    if not isinstance(data, PartialTensor):
        raise PreconditionError("partial factorization needs partial_tensor data")
    if data.m != m:
        raise PreconditionError(f"data head covers {data.head_count} particles, expected m - 1 = {m - 1}")
    if s < m - 1:
        raise PreconditionError("need s >= m - 1")
    d = data.d
    joint_kind = HierarchyKind.enskog(epsilon, m, d, ell)
    single_kind = HierarchyKind.enskog(epsilon, 1, d, ell)
    seeds = np.random.SeedSequence(seed).spawn(len(probes))
    rows = []
    for p, Z in enumerate(probes):
        if Z.s != s:
            raise ValueError(f"probe {p} has {Z.s} particles, expected {s}")
        Z = Z.with_epsilon(epsilon)
        joint_seed, head_seed, *tail_seeds = seeds[p].spawn(2 + s - m + 1)
        joint = eval_series(SeriesQuery(joint_kind, s, Z, t, k_max, n_mc, joint_seed), data)
        h = m - 1
        if s == h:
            head = joint
        else:
            head = eval_series(SeriesQuery(joint_kind, h, Z.take(range(h)), t, k_max, n_mc, head_seed), data)
        factors = [head]
        one = TensorPower(data.tail_base)
        for n, ts in zip(range(h, s), tail_seeds):
            factors.append(eval_series(SeriesQuery(single_kind, 1, Z.take([n]), t, k_max, n_mc, ts), one))
        j, j_se = joint.truncated(k_max)
        if len(factors) == 1:
            prod, prod_se = j, j_se
            naive = j
            diff, comb = 0.0, 0.0
        else:
            prod, prod_se = _cauchy_product(factors, k_max)
            naive = math.prod(f.truncated(k_max)[0] for f in factors)
            diff = j - prod
            comb = math.hypot(j_se, prod_se)
        rows.append(FactorizationRow(p, j, j_se, prod, prod_se, naive, diff, comb))
    return rows

