"""Initial-data densities: Gaussian particles, mixtures, tensor powers and partial tensors.

Single-particle densities are called as ``f(x, v)`` with arrays of shape
(..., d). Many-particle densities are called as ``F(X, V)`` with arrays of
shape (..., s, d) and return shape (...).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GaussianProduct:
    """Gaussian blob in x times a Maxwellian in v with inverse temperature beta.

    ``spatial_sigma=None`` gives the spatially homogeneous Maxwellian, which
    is not normalisable in x and is meant for pointwise collision checks.
    """

    beta: float = 1.0
    center: tuple = (0.0, 0.0)
    spatial_sigma: float | None = 1.0
    velocity_mean: tuple | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.spatial_sigma is not None and self.spatial_sigma <= 0:
            raise ValueError("spatial_sigma must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.velocity_mean is not None:
            object.__setattr__(self, "velocity_mean", tuple(float(c) for c in self.velocity_mean))
            if len(self.velocity_mean) != len(self.center):
                raise ValueError("velocity_mean and center must have the same dimension")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def u(self) -> np.ndarray:
        return np.zeros(self.d) if self.velocity_mean is None else np.asarray(self.velocity_mean)

    def spatial(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.spatial_sigma is None:
            return np.ones(x.shape[:-1])
        s2 = self.spatial_sigma**2
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return np.exp(-0.5 * r2 / s2) / (2.0 * math.pi * s2) ** (self.d / 2)

    def maxwellian(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        r2 = np.sum((v - self.u) ** 2, axis=-1)
        return (self.beta / (2.0 * math.pi)) ** (self.d / 2) * np.exp(-0.5 * self.beta * r2)

    def __call__(self, x, v) -> np.ndarray:
        return self.spatial(x) * self.maxwellian(v)

    def proposal(self) -> tuple[np.ndarray, float]:
        """Mean and inverse temperature used for velocity importance sampling."""
        return self.u, self.beta

    def weighted_sup(self, beta0: float) -> float:
        """sup over (x, v) of f(x, v) exp(beta0 |v|^2 / 2); infinite when beta0 >= beta with drift."""
        peak = 1.0 if self.spatial_sigma is None else (2.0 * math.pi * self.spatial_sigma**2) ** (-self.d / 2)
        norm = (self.beta / (2.0 * math.pi)) ** (self.d / 2)
        u2 = float(self.u @ self.u)
        if beta0 > self.beta or (beta0 == self.beta and u2 > 0):
            return math.inf
        if beta0 == self.beta:
            return peak * norm
        # maximiser of -beta|v-u|^2/2 + beta0|v|^2/2 is v = beta u / (beta - beta0)
        expo = 0.5 * self.beta * beta0 * u2 / (self.beta - beta0)
        return peak * norm * math.exp(expo)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        if self.spatial_sigma is None:
            raise ValueError("cannot sample positions from a homogeneous density")
        x = np.asarray(self.center) + self.spatial_sigma * rng.standard_normal((n, self.d))
        v = self.u + rng.standard_normal((n, self.d)) / math.sqrt(self.beta)
        return x, v

    def to_dict(self) -> dict:
        return {"kind": "gaussian_product", "beta": self.beta, "center": list(self.center),
                "spatial_sigma": self.spatial_sigma,
                "velocity_mean": None if self.velocity_mean is None else list(self.velocity_mean)}


@dataclass(frozen=True)
class Mixture:
    """Convex combination of densities of the same arity."""

    weights: tuple
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.components) or len(w) == 0:
            raise ValueError("need one weight per component")
        if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", tuple(float(a) for a in w))
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def d(self) -> int:
        return self.components[0].d

    def __call__(self, x, v) -> np.ndarray:
        return sum(w * c(x, v) for w, c in zip(self.weights, self.components))

    def proposal(self) -> tuple[np.ndarray, float]:
        means, betas = zip(*(c.proposal() for c in self.components))
        mean = sum(w * np.asarray(m) for w, m in zip(self.weights, means))
        return mean, min(betas)

    def weighted_sup(self, beta0: float) -> float:
        return sum(w * c.weighted_sup(beta0) for w, c in zip(self.weights, self.components))

    def sample(self, rng: np.random.Generator, n: int):
        which = rng.choice(len(self.components), size=n, p=self.weights)
        parts = [c.sample(rng, n) for c in self.components]
        x = np.stack([p[0] for p in parts])[which, np.arange(n)]
        v = np.stack([p[1] for p in parts])[which, np.arange(n)]
        return x, v

    def to_dict(self) -> dict:
        return {"kind": "mixture", "weights": list(self.weights), "components": [c.to_dict() for c in self.components]}


@dataclass(frozen=True)
class TensorPower:
    """F(Z_s) = prod_i f(z_i); ``count=None`` accepts any number of particles."""

    base: object
    count: int | None = None

    @property
    def d(self) -> int:
        return self.base.d

    def __call__(self, X, V) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.count is not None and X.shape[-2] != self.count:
            raise ValueError(f"density is defined for {self.count} particles, got {X.shape[-2]}")
        return np.prod(self.base(X, V), axis=-1)

    def tail(self):
        return self.base

    def proposal(self):
        return self.base.proposal()

    def to_dict(self) -> dict:
        return {"kind": "tensor_power", "base": self.base.to_dict(), "count": self.count}


@dataclass(frozen=True)
class ProductMixture:
    """Correlated s-particle density: a mixture of tensor products of single-particle laws.

    ``terms`` is a tuple of tuples, one single-particle density per particle.
    """

    weights: tuple
    terms: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.terms) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("need nonnegative weights summing to 1, one per term")
        if len({len(t) for t in self.terms}) != 1:
            raise ValueError("all terms must have the same number of particles")
        object.__setattr__(self, "weights", tuple(float(a) for a in w))
        object.__setattr__(self, "terms", tuple(tuple(t) for t in self.terms))

    @property
    def count(self) -> int:
        return len(self.terms[0])

    @property
    def d(self) -> int:
        return self.terms[0][0].d

    def __call__(self, X, V) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        V = np.asarray(V, dtype=float)
        if X.shape[-2] != self.count:
            raise ValueError(f"density is defined for {self.count} particles, got {X.shape[-2]}")
        total = 0.0
        for w, term in zip(self.weights, self.terms):
            val = 1.0
            for p, f in enumerate(term):
                val = val * f(X[..., p, :], V[..., p, :])
            total = total + w * val
        return total

    def weighted_sup(self, beta0: float) -> float:
        return sum(w * math.prod(f.weighted_sup(beta0) for f in t) for w, t in zip(self.weights, self.terms))

    def to_dict(self) -> dict:
        return {"kind": "product_mixture", "weights": list(self.weights),
                "terms": [[f.to_dict() for f in t] for t in self.terms]}


@dataclass(frozen=True)
class PartialTensor:
    """head(Z_{m-1}) times tail_base at every later particle."""

    head: object
    tail_base: object
    head_count: int = field(default=0)

    def __post_init__(self):
        n = getattr(self.head, "count", None)
        if not self.head_count:
            if n is None:
                raise ValueError("head density must declare its particle count")
            object.__setattr__(self, "head_count", int(n))

    @property
    def m(self) -> int:
        return self.head_count + 1

    @property
    def d(self) -> int:
        return self.tail_base.d

    def __call__(self, X, V) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        V = np.asarray(V, dtype=float)
        h = self.head_count
        if X.shape[-2] < h:
            raise ValueError(f"partial tensor needs at least {h} particles")
        out = self.head(X[..., :h, :], V[..., :h, :])
        if X.shape[-2] > h:
            out = out * np.prod(self.tail_base(X[..., h:, :], V[..., h:, :]), axis=-1)
        return out

    def tail(self):
        return self.tail_base

    def proposal(self):
        return self.tail_base.proposal()

    def to_dict(self) -> dict:
        return {"kind": "partial_tensor", "head": self.head.to_dict(), "tail_base": self.tail_base.to_dict()}


def single_proposal(data, d: int | None = None) -> tuple[np.ndarray, float]:
    """Velocity proposal (mean, beta) for particles created under the given data.

    Plain callables without a proposal get a centred unit Maxwellian in dimension d.
    """
    if hasattr(data, "proposal"):
        return data.proposal()
    return np.zeros(d if d is not None else data.d), 1.0


def from_dict(spec: dict):
    kind = spec.get("kind")
    if kind == "gaussian_product":
        return GaussianProduct(spec.get("beta", 1.0), tuple(spec.get("center", (0.0, 0.0))),
                               spec.get("spatial_sigma", 1.0), spec.get("velocity_mean"))
    if kind == "mixture":
        return Mixture(tuple(spec["weights"]), tuple(from_dict(c) for c in spec["components"]))
    if kind == "tensor_power":
        return TensorPower(from_dict(spec["base"]), spec.get("count"))
    if kind == "product_mixture":
        return ProductMixture(tuple(spec["weights"]), tuple(tuple(from_dict(f) for f in t) for t in spec["terms"]))
    if kind == "partial_tensor":
        return PartialTensor(from_dict(spec["head"]), from_dict(spec["tail_base"]))
    raise ValueError(f"unknown density kind {kind!r}")
