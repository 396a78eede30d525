"""The drifted lattice network: vertices, conductances, step law and metric.

The network lives on Z x Z^d. The edge between nearest neighbours ``(n, x)``
and ``(n', x')`` carries conductance ``exp(lam * max(n, n'))``, so the network
random walk drifts towards increasing ``n``.

Steps are encoded as small integers throughout the package: code 0 moves
``n`` up, code 1 moves it down, codes ``2 + 2i`` and ``3 + 2i`` move transverse
coordinate ``i`` by +1 and -1, and (lazy walks only) code ``2d + 2`` stays put.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DomainError
from .unionfind import DisjointSet

__all__ = [
    "LatticeParams",
    "Vertex",
    "StepDistribution",
    "Moments",
    "SpreadTree",
    "conductance",
    "vertex_conductance",
    "step_distribution",
    "step_deltas",
    "step_probabilities",
    "moments",
    "fourier_transform",
    "eta",
    "spread_point",
    "spread",
    "neighbors",
    "is_neighbor",
]


@dataclass(frozen=True)
class LatticeParams:
    d: int
    lam: float
    lazy: bool = False

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.d}")
        if not self.lam > 0:
            raise DomainError(f"drift must be positive, got {self.lam}")

    @property
    def normalizer(self):
        """``2d + 1 + e^lam``, the conductance of a vertex on level 0."""
        return 2 * self.d + 1 + math.exp(self.lam)

    @property
    def n_codes(self):
        return 2 * self.d + 2 + (1 if self.lazy else 0)


@dataclass(frozen=True, order=True, slots=True)
class Vertex:
    """A point ``(n, x)`` of Z x Z^d; ``n`` is the drifted coordinate."""

    n: int
    x: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "x", tuple(int(c) for c in self.x))

    @classmethod
    def origin(cls, d):
        return cls(0, (0,) * d)

    @classmethod
    def from_seq(cls, coords):
        coords = [int(c) for c in coords]
        return cls(coords[0], tuple(coords[1:]))

    @property
    def dim(self):
        return len(self.x)

    def as_tuple(self):
        return (self.n,) + self.x

    def as_array(self):
        return np.array(self.as_tuple(), dtype=np.int64)

    def __add__(self, other):
        return Vertex(self.n + other.n, tuple(a + b for a, b in zip(self.x, other.x)))

    def __sub__(self, other):
        return Vertex(self.n - other.n, tuple(a - b for a, b in zip(self.x, other.x)))

    def __neg__(self):
        return Vertex(-self.n, tuple(-a for a in self.x))

    def __str__(self):
        return " ".join(str(c) for c in self.as_tuple())


@dataclass(frozen=True)
class StepDistribution:
    prob_up: float
    prob_down: float
    prob_transverse: float
    prob_stay: float = 0.0


@dataclass(frozen=True)
class Moments:
    a: float
    sigma0_sq: float
    sigma_sq: float


@dataclass(frozen=True)
class SpreadTree:
    vertices: frozenset
    edges: tuple
    product: float


def _check_dim(params, *vertices):
    for v in vertices:
        if v.dim != params.d:
            raise DomainError(f"vertex {v!r} has dimension {v.dim}, expected {params.d}")


def is_neighbor(u, v):
    diff = (v - u).as_tuple()
    return sum(abs(c) for c in diff) == 1


def neighbors(v):
    """The ``2d + 2`` nearest neighbours of ``v`` in step-code order."""
    out = [Vertex(v.n + 1, v.x), Vertex(v.n - 1, v.x)]
    for i in range(v.dim):
        for s in (1, -1):
            x = list(v.x)
            x[i] += s
            out.append(Vertex(v.n, tuple(x)))
    return out


def conductance(params, u, v):
    """Conductance ``exp(lam * max(u.n, v.n))`` of the edge between neighbours."""
    _check_dim(params, u, v)
    if not is_neighbor(u, v):
        raise DomainError(f"{u} and {v} are not nearest neighbours")
    return math.exp(params.lam * max(u.n, v.n))


def vertex_conductance(params, v):
    """Sum of the conductances of the edges at ``v``."""
    _check_dim(params, v)
    return math.exp(params.lam * v.n) * params.normalizer


def step_distribution(params):
    norm = params.normalizer
    up = math.exp(params.lam) / norm
    other = 1.0 / norm
    if params.lazy:
        return StepDistribution(up / 2, other / 2, other / 2, 0.5)
    return StepDistribution(up, other, other, 0.0)


def step_probabilities(params):
    """Probability of each step code, as an array of length ``params.n_codes``."""
    sd = step_distribution(params)
    probs = [sd.prob_up, sd.prob_down] + [sd.prob_transverse] * (2 * params.d)
    if params.lazy:
        probs.append(sd.prob_stay)
    return np.array(probs)


def step_deltas(d, lazy=False):
    """Displacement of each step code, shape ``(n_codes, d + 1)``."""
    k = 2 * d + 2 + (1 if lazy else 0)
    out = np.zeros((k, d + 1), dtype=np.int64)
    out[0, 0] = 1
    out[1, 0] = -1
    for i in range(d):
        out[2 + 2 * i, 1 + i] = 1
        out[3 + 2 * i, 1 + i] = -1
    return out


def moments(params):
    """Mean drift and step variances of the (non-lazy) walk."""
    norm = params.normalizer
    el = math.exp(params.lam)
    return Moments(a=(el - 1) / norm, sigma0_sq=(el + 1) / norm, sigma_sq=2 / norm)


def fourier_transform(params, h):
    """Characteristic function of one (non-lazy) step at frequency ``h``."""
    h = np.asarray(h, dtype=float)
    if h.shape != (params.d + 1,):
        raise DomainError(f"frequency must have length {params.d + 1}")
    if np.any(np.abs(h) > math.pi):
        raise DomainError("frequencies must lie in [-pi, pi]")
    norm = params.normalizer
    el = math.exp(params.lam)
    return complex(
        (el * np.exp(1j * h[0]) + np.exp(-1j * h[0])) / norm
        + 2.0 / norm * np.cos(h[1:]).sum()
    )


def eta(z):
    """``max(|n|^(1/2), ||x||)`` with the Euclidean norm on the transverse part."""
    return max(math.sqrt(abs(z.n)), math.sqrt(sum(c * c for c in z.x)))


def spread_point(z):
    return max(1.0, eta(z))


def spread(vertices):
    """Minimum over spanning trees of the product of pairwise spreads.

    Solved exactly as a minimum spanning tree on ``log spread_point(a - b)``
    (Kruskal). Ties are broken by the lexicographic order of the sorted
    endpoint pair, which makes the returned edge list deterministic.
    """
    verts = sorted(set(vertices))
    if not verts:
        raise DomainError("spread of an empty set")
    if len(verts) == 1:
        return SpreadTree(frozenset(verts), (), 1.0)
    # log is monotone, so sorting raw weights orders the log-weights too
    candidates = sorted((spread_point(b - a), a, b) for a, b in combinations(verts, 2))
    ds = DisjointSet(verts)
    edges = []
    product = 1.0
    for w, a, b in candidates:
        if ds.union(a, b):
            edges.append((a, b))
            product *= w
            if len(edges) == len(verts) - 1:
                break
    return SpreadTree(frozenset(verts), tuple(edges), product)
