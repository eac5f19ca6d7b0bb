"""Exceptional extension sets, their Monte Carlo measure and the stability claims.

An extension of a pseudo-trajectory endpoint Z' by one creation is
parametrised by (tau, v_new, omega_new) in [0, T] x B_{2R} x S^{d-1}, with a
fixed parent index. The labelled sets below are evaluated on batches of such
samples against the projected states of Z' and of its backward flow
Z'(tau) = psi^{-tau} Z'.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import BackwardHistory, PhaseState, backward_history
from .errors import DegenerateSamplingError, InvalidCreationError, PreconditionError
from .geometry import ball_volume, sample_ball, sample_sphere, sphere_area
from .goodsets import in_G, in_Uhat
from .jset import JSet, jset
from .mc import MCEstimate, chunk_sizes, spawn_generators, wilson_interval
from .pseudotraj import CreationSpec, HierarchyKind, build

PRE_LABELS = ("I", "II", "III-", "IV-")
POST_LABELS = ("I", "II", "III+", "IV+", "V+", "VI+", "VII+")
LABELS = ("I", "II", "III-", "IV-", "III+", "IV+", "V+", "VI+", "VII+")


@dataclass(frozen=True)
class StabilityParams:
    epsilon: float
    kappa: float
    eta: float
    y: float
    theta: float
    alpha: float
    R: float
    T: float
    ell: float = 1.0
    c_d: float = 1.0
    d: int = 2

    def __post_init__(self):
        for name in ("epsilon", "eta", "y", "theta", "alpha", "R", "T", "ell", "c_d"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive")
        if not 0.0 < self.kappa < 1.0:
            raise PreconditionError("kappa must lie in (0, 1)")
        if not (0.0 < self.alpha < math.pi / 2 and 0.0 < self.theta < math.pi / 2):
            raise PreconditionError("alpha and theta must lie in (0, pi/2)")
        if self.eta >= self.R:
            raise PreconditionError("eta must be below R")
        if not math.sin(self.theta) > self.c_d * self.epsilon / self.y:
            raise PreconditionError("sin(theta) must exceed c_d * epsilon / y")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def replace(self, **changes) -> "StabilityParams":
        return dataclasses.replace(self, **changes)


def default_scalings(epsilon: float, kappa: float, alpha: float, R: float, T: float, ell: float = 1.0,
                     c_d: float = 1.0, theta_exponent: float | None = None, d: int = 2) -> StabilityParams:
    """eta = eps^kappa, y = eps^((1+kappa)/2), sin(theta) = 2 c_d eps^e.

    The exponent e defaults to (1-kappa)/2, the smallest angle compatible with
    sin(theta) > c_d eps / y; any e in [(1-kappa)/4, (1-kappa)/2] is accepted.
    """
    if not 0.0 < kappa < 1.0:
        raise PreconditionError("kappa must lie in (0, 1)")
    e = (1.0 - kappa) / 2.0 if theta_exponent is None else theta_exponent
    if not (1.0 - kappa) / 4.0 - 1e-15 <= e <= (1.0 - kappa) / 2.0 + 1e-15:
        raise PreconditionError("theta exponent must lie in [(1-kappa)/4, (1-kappa)/2]")
    sin_theta = 2.0 * c_d * epsilon**e
    if sin_theta >= 1.0:
        raise PreconditionError(f"sin(theta) = {sin_theta:.3g} >= 1: epsilon too large for kappa and c_d")
    return StabilityParams(epsilon=epsilon, kappa=kappa, eta=epsilon**kappa, y=epsilon ** ((1 + kappa) / 2),
                           theta=math.asin(sin_theta), alpha=alpha, R=R, T=T, ell=ell, c_d=c_d, d=d)


@dataclass(frozen=True)
class ExtensionSamples:
    """Batch of extension parameters; a single sample is a batch of one."""

    tau: np.ndarray
    v_new: np.ndarray
    omega: np.ndarray

    @classmethod
    def single(cls, tau, v_new, omega) -> "ExtensionSamples":
        return cls(np.array([float(tau)]), np.atleast_2d(np.asarray(v_new, float)),
                   np.atleast_2d(np.asarray(omega, float)))

    @classmethod
    def uniform(cls, rng: np.random.Generator, n: int, d: int, T: float, R: float) -> "ExtensionSamples":
        tau = T * rng.random(n)
        v = sample_ball(rng, n, d, 2.0 * R)
        w = sample_sphere(rng, n, d)
        return cls(tau, v, w)

    def __len__(self) -> int:
        return self.tau.shape[0]

    def item(self, n: int) -> tuple[float, np.ndarray, np.ndarray]:
        return float(self.tau[n]), self.v_new[n], self.omega[n]


def box_volume(d: int, T: float, R: float) -> float:
    return T * ball_volume(d, 2.0 * R) * sphere_area(d)


@dataclass
class Base:
    """A pseudo-trajectory endpoint Z' with cached backward history and projected states."""

    Z_s: PhaseState
    spec: CreationSpec
    kind: HierarchyKind
    m: int
    endpoint: PhaseState = field(init=False)
    history: BackwardHistory = field(init=False)
    J: JSet = field(init=False)

    def __post_init__(self):
        self.endpoint = build(self.Z_s, self.spec, self.kind).final_state
        self.history = backward_history(self.endpoint)
        self.J = jset(self.endpoint)

    @classmethod
    def from_endpoint(cls, endpoint: PhaseState, m: int, ell: float = 1.0) -> "Base":
        """Treat an arbitrary configuration as the order-0 endpoint of itself (t = 0)."""
        kind = HierarchyKind.bbgky_at(endpoint.epsilon, endpoint.d, ell)
        return cls(endpoint, CreationSpec(0.0, (), np.zeros((0, endpoint.d)), np.zeros((0, endpoint.d)), ()),
                   kind, m)

    @property
    def size(self) -> int:
        return self.endpoint.s

    def is_good(self, eta: float) -> bool:
        return in_G(self.endpoint, self.m) and in_Uhat(self.endpoint, eta, self.J)


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    dot = np.sum(a * b, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = dot / (na * nb)
    return np.where((na > 0) & (nb > 0), cos, -np.inf)


def bad_masks(base: Base, samples: ExtensionSamples, params: StabilityParams, i_new: int,
              labels=LABELS) -> dict[str, np.ndarray]:
    """Boolean membership of every sample in each requested labelled set."""
    unknown = set(labels) - set(LABELS)
    if unknown:
        raise ValueError(f"unknown bad-set labels {sorted(unknown)}")
    if not 0 <= i_new < base.size:
        raise ValueError(f"parent index {i_new} outside range({base.size})")
    eps = params.epsilon
    tau, v, w = samples.tau, samples.v_new, samples.omega
    n = tau.shape[0]
    J = base.J
    out: dict[str, np.ndarray] = {}

    # set I: two distinct projected states of Z' within y at time tau
    if len(J) > 1:
        a, b = np.triu_indices(len(J), 1)
        dx = J.x[a] - J.x[b]
        dv = J.v[a] - J.v[b]
        sep = np.linalg.norm(dx[None, :, :] - dv[None, :, :] * tau[:, None, None], axis=-1)
        bad_I = np.any(sep <= params.y, axis=1)
    else:
        bad_I = np.zeros(n, dtype=bool)
    xi, vi = base.history.particle_at(i_new, tau)
    u = v - vi
    c = np.sum(w * u, axis=1)
    unorm = np.linalg.norm(u, axis=1)
    bad_II = np.abs(c) <= math.sin(params.alpha) * unorm
    clear = ~(bad_I | bad_II)
    pre = (c <= 0) & clear
    post = (c > 0) & clear
    out["I"] = bad_I
    out["II"] = bad_II

    # projected states of Z'(tau): x0 - v0 tau, valid while horizon > tau
    alive = J.horizon[None, :] > tau[:, None]
    x0 = J.x[None, :, :] - J.v[None, :, :] * tau[:, None, None]
    v0 = np.broadcast_to(J.v[None, :, :], x0.shape)
    x_created = xi + eps * w
    cos_t = math.cos(params.theta)
    vstar_new = v - w * c[:, None]
    vstar_i = vi + w * c[:, None]
    self_pt = (np.linalg.norm(x0 - xi[:, None, :], axis=-1) <= J.dedup_tol) & \
              (np.linalg.norm(v0 - vi[:, None, :], axis=-1) <= J.dedup_tol)
    others = alive & ~self_pt

    def any_j(mask):
        return np.any(mask, axis=1)

    if "III-" in labels:
        out["III-"] = pre & any_j(alive & (np.linalg.norm(v0 - v[:, None, :], axis=-1) <= params.eta))
    if "IV-" in labels:
        cos = _cosine(x_created[:, None, :] - x0, v[:, None, :] - v0)
        out["IV-"] = pre & any_j(alive & (cos >= cos_t))
    if "III+" in labels:
        out["III+"] = post & any_j(alive & (np.linalg.norm(v0 - vstar_new[:, None, :], axis=-1) <= params.eta))
    if "IV+" in labels:
        out["IV+"] = post & any_j(alive & (np.linalg.norm(v0 - vstar_i[:, None, :], axis=-1) <= params.eta))
    if "V+" in labels:
        out["V+"] = post & (unorm <= params.eta)
    if "VI+" in labels:
        cos = _cosine(x_created[:, None, :] - x0, vstar_new[:, None, :] - v0)
        out["VI+"] = post & any_j(others & (cos >= cos_t))
    if "VII+" in labels:
        cos = _cosine(xi[:, None, :] - x0, vstar_i[:, None, :] - v0)
        out["VII+"] = post & any_j(others & (cos >= cos_t))
    return {k: out[k] for k in labels}


def in_bad(label: str, base: Base, tau: float, v_new, omega, params: StabilityParams, i_new: int) -> bool:
    if label not in LABELS:
        raise ValueError(f"unknown bad-set label {label!r}")
    masks = bad_masks(base, ExtensionSamples.single(tau, v_new, omega), params, i_new, (label,))
    return bool(masks[label][0])


def union_mask(base: Base, samples: ExtensionSamples, params: StabilityParams, i_new: int,
               labels=LABELS) -> np.ndarray:
    labels = tuple(labels)
    if not labels:
        return np.zeros(len(samples), dtype=bool)
    masks = bad_masks(base, samples, params, i_new, labels)
    return np.logical_or.reduce([masks[k] for k in labels])


def estimate_measure(labels, base: Base, params: StabilityParams, i_new: int, n_samples: int, seed,
                     chunk: int = 8192) -> MCEstimate:
    """Uniform-box Monte Carlo estimate of the measure of a union of labelled sets."""
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    labels = tuple(labels)
    d = base.endpoint.d
    vol = box_volume(d, params.T, params.R)
    if not labels:
        return MCEstimate(0.0, 0.0, n_samples, vol)
    sizes = chunk_sizes(n_samples, chunk)
    hits = 0
    for size, rng in zip(sizes, spawn_generators(seed, len(sizes))):
        samples = ExtensionSamples.uniform(rng, size, d, params.T, params.R)
        hits += int(np.count_nonzero(union_mask(base, samples, params, i_new, labels)))
    return MCEstimate.from_counts(hits, n_samples, vol)


def estimate_all_labels(base: Base, params: StabilityParams, i_new: int, n_samples: int, seed,
                        chunk: int = 8192) -> dict[str, MCEstimate]:
    """Single-label and union measures from one shared sample stream."""
    d = base.endpoint.d
    vol = box_volume(d, params.T, params.R)
    sizes = chunk_sizes(n_samples, chunk)
    hits = {k: 0 for k in LABELS + ("all", "pre", "post")}
    for size, rng in zip(sizes, spawn_generators(seed, len(sizes))):
        samples = ExtensionSamples.uniform(rng, size, d, params.T, params.R)
        masks = bad_masks(base, samples, params, i_new)
        for k, mk in masks.items():
            hits[k] += int(np.count_nonzero(mk))
        hits["all"] += int(np.count_nonzero(np.logical_or.reduce(list(masks.values()))))
        hits["pre"] += int(np.count_nonzero(np.logical_or.reduce([masks[k] for k in PRE_LABELS])))
        hits["post"] += int(np.count_nonzero(np.logical_or.reduce([masks[k] for k in POST_LABELS])))
    return {k: MCEstimate.from_counts(h, n_samples, vol) for k, h in hits.items()}


def analytic_bound(params: StabilityParams, side: str, C: float, C_alpha: float = 1.0) -> float:
    """C T R^d [alpha + y/(eta T) + ...] with the side-specific eta and theta terms."""
    if C <= 0 or C_alpha <= 0:
        raise ValueError("constants must be positive")
    d = params.d
    p = params
    head = p.alpha + p.y / (p.eta * p.T)
    if side == "post":
        tail = C_alpha * (p.eta / p.R) ** (d - 1) + C_alpha * p.theta ** ((d - 1) / 2)
    elif side == "pre":
        tail = (p.eta / p.R) ** d + p.theta ** (d - 1)
    else:
        raise ValueError("side must be 'pre' or 'post'")
    return C * p.T * p.R**d * (head + tail)


def label_bound(label: str, params: StabilityParams, C: float, C_alpha: float = 1.0) -> float:
    """The per-set bound displayed for one labelled set (constants supplied)."""
    d = params.d
    p = params
    table = {
        "I": C * p.R**d * p.y / p.eta,
        "II": C * p.T * p.R**d * p.alpha,
        "III-": C * p.T * p.eta**d,
        "IV-": C * p.T * p.R**d * p.theta ** (d - 1),
        "III+": C * C_alpha * p.T * p.R * p.eta ** (d - 1),
        "IV+": C * C_alpha * p.T * p.R * p.eta ** (d - 1),
        "V+": C * p.T * p.eta**d,
        "VI+": C * C_alpha * p.T * p.R**d * p.theta ** ((d - 1) / 2),
        "VII+": C * C_alpha * p.T * p.R**d * p.theta ** ((d - 1) / 2),
    }
    if label not in table:
        raise ValueError(f"unknown bad-set label {label!r}")
    return table[label]


def verify_claim_i(base: Base, tau_shift: float, eta: float) -> bool:
    """Rebuild the pseudo-trajectory with every time shifted by tau and re-check G and Uhat."""
    if tau_shift < 0:
        raise ValueError("tau_shift must be nonnegative")
    if not base.is_good(eta):
        raise PreconditionError("base endpoint is not in the good set")
    if tau_shift == 0:
        return True
    shifted = build(base.Z_s, base.spec.shifted(tau_shift), base.kind).final_state
    J = jset(shifted)
    return in_G(shifted, base.m) and in_Uhat(shifted, eta, J)


@dataclass
class ClaimIIResult:
    fraction_good: float
    n_outside_B: int
    n_good: int
    n_samples: int
    failures: list = field(default_factory=list)

    @property
    def wilson(self) -> tuple[float, float]:
        return wilson_interval(self.n_good, self.n_outside_B)

    def to_dict(self) -> dict:
        lo, hi = self.wilson
        return {"fraction_good": self.fraction_good, "n_outside_B": self.n_outside_B, "n_good": self.n_good,
                "n_samples": self.n_samples, "wilson_low": lo, "wilson_high": hi, "failures": self.failures}


def extended_state(base: Base, tau: float, v_new, omega, i_new: int) -> PhaseState:
    """The configuration right after creating a particle at backward time tau past the base endpoint."""
    spec = base.spec.shifted(tau).extended(v_new, omega, i_new, 0.0)
    return build(base.Z_s, spec, base.kind).final_state


def verify_claim_ii(base: Base, params: StabilityParams, i_new: int, n_samples: int, seed,
                    chunk: int = 4096, max_failures: int = 20) -> ClaimIIResult:
    """Fraction of extensions outside the exceptional union that land in the good set."""
    if not base.is_good(params.eta):
        raise PreconditionError("base endpoint is not in G intersected with Uhat at this eta")
    if base.endpoint.energy() > 2.0 * params.R**2:
        raise PreconditionError("base energy exceeds 2 R^2")
    d = base.endpoint.d
    sizes = chunk_sizes(n_samples, chunk)
    n_out = n_good = 0
    failures = []
    for size, rng in zip(sizes, spawn_generators(seed, len(sizes))):
        samples = ExtensionSamples.uniform(rng, size, d, params.T, params.R)
        bad = union_mask(base, samples, params, i_new)
        for n in np.nonzero(~bad)[0]:
            tau, v, w = samples.item(n)
            n_out += 1
            try:
                Z = extended_state(base, tau, v, w, i_new)
                ok = in_G(Z, base.m) and in_Uhat(Z, params.eta)
            except InvalidCreationError:
                ok = False
            if ok:
                n_good += 1
            elif len(failures) < max_failures:
                failures.append(base.spec.shifted(tau).extended(v, w, i_new, 0.0).to_dict())
    if n_out == 0:
        raise DegenerateSamplingError("every sample fell in the exceptional union; parameters are degenerate")
    return ClaimIIResult(n_good / n_out, n_out, n_good, n_samples, failures)


def fit_c_d(base_list, params: StabilityParams, n_samples: int, seed, ladder=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
            target: float = 1.0):
    """Smallest c_d on the ladder for which every base reaches the target good fraction.

    Returns (c_d, results) where results holds the ClaimIIResult per base, or
    (None, results at the last admissible rung) if no rung qualifies.
    """
    last = []
    for c_d in ladder:
        try:
            p = default_scalings(params.epsilon, params.kappa, params.alpha, params.R, params.T, params.ell,
                                 c_d=c_d, d=params.d)
        except PreconditionError:
            break
        results = [verify_claim_ii(b, p, i, n_samples, seed) for b, i in base_list]
        last = results
        if all(r.fraction_good >= target for r in results):
            return c_d, results
    return None, last


def random_base(rng: np.random.Generator, s: int, k: int, m: int, epsilon: float, eta: float, R: float,
                t: float = 1.0, d: int = 2, ell: float = 1.0, max_tries: int = 10_000) -> Base:
    """Rejection-sample a BBGKY pseudo-trajectory endpoint with s + k particles in G and Uhat.

    Positions are uniform in a box of side 4 and velocities uniform in B_R;
    creation data are uniform on the simplex, the sphere and B_R.
    """
    kind = HierarchyKind.bbgky_at(epsilon, d, ell)
    for _ in range(max_tries):
        x = rng.uniform(-2.0, 2.0, size=(s, d))
        v = sample_ball(rng, s, d, R / math.sqrt(s + k))
        Z = PhaseState(x, v, epsilon)
        if Z.min_separation() <= epsilon:
            continue
        times = tuple(sorted(t * rng.random(k), reverse=True))
        spec = CreationSpec(t, times, sample_ball(rng, k, d, R / math.sqrt(s + k)), sample_sphere(rng, k, d),
                            tuple(int(rng.integers(0, s + j)) for j in range(k)))
        try:
            base = Base(Z, spec, kind, m)
        except InvalidCreationError:
            continue
        if base.is_good(eta) and base.endpoint.energy() <= 2.0 * R**2:
            return base
    raise DegenerateSamplingError("no admissible base found; relax eta or epsilon")
