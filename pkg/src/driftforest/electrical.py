"""Electrical calculus on finite networks.

Conventions, fixed once:

* every stored edge ``(u, v, c)`` is oriented ``u -> v``; a flow is an array
  over stored edges, with the reverse orientation carrying the negated value;
* ``gradient(f)(u -> v) = c(u, v) * (f(u) - f(v))``;
* ``divergence(theta)(x)`` is the net flow out of ``x``;
* so ``divergence(gradient(f)) / mu = f - P f`` where ``mu(x)`` is the sum of
  conductances at ``x`` and ``P`` the network random walk kernel;
* flow inner products weight edges by resistance ``r = 1/c``, vertex inner
  products weight vertices by ``mu``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .errors import DomainError
from .lattice import LatticeParams, Vertex, conductance, neighbors, vertex_conductance
from .wilson import WIRED

__all__ = [
    "FiniteNetwork",
    "EdgeFlow",
    "gradient",
    "divergence",
    "dirichlet_energy",
    "is_harmonic",
    "effective_conductance",
    "effective_resistance",
    "unit_current_flow",
    "flow_energy",
    "flow_inner",
    "gauss_green_sides",
    "gauss_green_check",
    "random_network",
]


class FiniteNetwork:
    """Finite graph with positive edge conductances; parallel edges allowed."""

    def __init__(self, vertices, edges):
        self.vertices = list(vertices)
        self.index = {v: i for i, v in enumerate(self.vertices)}
        if len(self.index) != len(self.vertices):
            raise DomainError("duplicate vertices")
        tails, heads, cond = [], [], []
        for u, v, c in edges:
            if not c > 0:
                raise DomainError("conductances must be positive")
            if u == v:
                raise DomainError("self-loops are not allowed")
            tails.append(self.index[u])
            heads.append(self.index[v])
            cond.append(float(c))
        self.tails = np.array(tails, dtype=np.int64)
        self.heads = np.array(heads, dtype=np.int64)
        self.cond = np.array(cond)
        n = len(self.vertices)
        self.adjacency = sp.csr_matrix(
            (np.concatenate([self.cond, self.cond]), (np.concatenate([self.tails, self.heads]), np.concatenate([self.heads, self.tails]))),
            shape=(n, n),
        )
        self.mu = np.asarray(self.adjacency.sum(axis=1)).ravel()

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.cond)

    @property
    def edges(self):
        return [(self.vertices[a], self.vertices[b], float(c)) for a, b, c in zip(self.tails, self.heads, self.cond)]

    def is_connected(self):
        ncomp, _ = csgraph.connected_components(self.adjacency, directed=False)
        return ncomp == 1

    def laplacian(self):
        return sp.diags(self.mu) - self.adjacency

    def transition(self):
        return sp.diags(1.0 / self.mu) @ self.adjacency

    def as_array(self, f):
        """Values of a vertex function (dict, callable or array) in vertex order."""
        if isinstance(f, np.ndarray):
            return f.astype(float)
        if callable(f):
            return np.array([f(v) for v in self.vertices], dtype=float)
        try:
            return np.array([f[v] for v in self.vertices], dtype=float)
        except KeyError as exc:
            raise DomainError(f"function undefined at {exc.args[0]}") from None

    def without_edge(self, k):
        edges = self.edges
        del edges[k]
        return FiniteNetwork(self.vertices, edges)

    @classmethod
    def from_box(cls, params, box):
        """Interior of ``box`` with the outside collapsed to the vertex ``WIRED``."""
        verts = box.vertices(params.d)
        inside = set(verts)
        edges = {}
        for v in verts:
            for w in neighbors(v):
                c = conductance(params, v, w)
                if w in inside:
                    if v < w:
                        edges[(v, w)] = c
                elif box.wired:
                    edges[(v, WIRED)] = edges.get((v, WIRED), 0.0) + c
        nodes = verts + ([WIRED] if box.wired else [])
        return cls(nodes, [(u, w, c) for (u, w), c in edges.items()])

    def to_csv(self, ids=str):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u_id", "v_id", "conductance"])
        for u, v, c in self.edges:
            w.writerow([ids(u), ids(v), repr(float(c))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, parse=str):
        rows = list(csv.DictReader(io.StringIO(text)))
        verts, seen, edges = [], set(), []
        for row in rows:
            u, v = parse(row["u_id"]), parse(row["v_id"])
            for x in (u, v):
                if x not in seen:
                    seen.add(x)
                    verts.append(x)
            edges.append((u, v, float(row["conductance"])))
        return cls(verts, edges)


@dataclass
class EdgeFlow:
    """Antisymmetric edge function, stored along each edge's own orientation."""

    net: FiniteNetwork
    values: np.ndarray

    def __getitem__(self, uv):
        u, v = uv
        a, b = self.net.index[u], self.net.index[v]
        fwd = (self.net.tails == a) & (self.net.heads == b)
        bwd = (self.net.tails == b) & (self.net.heads == a)
        return float(self.values[fwd].sum() - self.values[bwd].sum())

    def __add__(self, other):
        return EdgeFlow(self.net, self.values + other.values)


def gradient(net, f):
    f = net.as_array(f)
    return EdgeFlow(net, net.cond * (f[net.tails] - f[net.heads]))


def divergence(net, theta):
    """Net flow out of every vertex."""
    out = np.zeros(net.n_vertices)
    np.add.at(out, net.tails, theta.values)
    np.add.at(out, net.heads, -theta.values)
    return out


def dirichlet_energy(net, f):
    """``sum over edges of c(e) (f(u) - f(v))^2``, each edge once."""
    f = net.as_array(f)
    return float(np.sum(net.cond * (f[net.tails] - f[net.heads]) ** 2))


def flow_inner(net, a, b):
    return float(np.sum(a.values * b.values / net.cond))


def flow_energy(net, theta):
    """``sum over edges of r(e) theta(e)^2``."""
    return flow_inner(net, theta, theta)


def is_harmonic(where, f, at, tol=1e-12):
    """Mean-value property ``|f(at) - sum_y p(at, y) f(y)| <= tol * max(1, |f(at)|)``.

    The tolerance is relative for large values, since ``f`` may grow
    exponentially (for instance ``exp(-lam * n)``).

    ``where`` is either :class:`LatticeParams` (``f`` is then a callable or a
    mapping on lattice vertices) or a :class:`FiniteNetwork`.
    """
    if isinstance(where, LatticeParams):
        def value(v):
            if callable(f):
                return f(v)
            if v not in f:
                raise DomainError(f"function undefined at neighbour {v}")
            return f[v]

        mu = vertex_conductance(where, at)
        mean = sum(conductance(where, at, w) / mu * value(w) for w in neighbors(at))
        return abs(value(at) - mean) <= tol * max(1.0, abs(value(at)))
    net = where
    i = net.index[at]
    row = net.adjacency.getrow(i)
    vals = net.as_array(f)
    mean = float(row.data @ vals[row.indices]) / net.mu[i]
    return abs(vals[i] - mean) <= tol * max(1.0, abs(vals[i]))


def _potential(net, source, sink):
    if source == sink:
        raise DomainError("source and sink must differ")
    s, t = net.index[source], net.index[sink]
    ncomp, labels = csgraph.connected_components(net.adjacency, directed=False)
    if labels[s] != labels[t]:
        raise DomainError("source and sink are not connected")
    keep = np.flatnonzero((labels == labels[s]) & (np.arange(net.n_vertices) != s) & (np.arange(net.n_vertices) != t))
    lap = net.laplacian().tocsr()
    v = np.zeros(net.n_vertices)
    v[s] = 1.0
    if keep.size:
        a = lap[keep][:, keep].tocsc()
        rhs = -lap[keep][:, [s]].toarray().ravel()
        v[keep] = spla.spsolve(a, rhs) if keep.size > 1 else rhs / a.toarray()[0, 0]
    return v, labels == labels[s]


def effective_conductance(net, source, sink):
    """Current out of ``source`` when it is held at potential 1 and ``sink`` at 0."""
    v, _ = _potential(net, source, sink)
    s = net.index[source]
    row = net.adjacency.getrow(s)
    return float(np.sum(row.data * (1.0 - v[row.indices])))


def effective_resistance(net, source, sink):
    return 1.0 / effective_conductance(net, source, sink)


def unit_current_flow(net, source, sink):
    """The unit current flow from ``source`` to ``sink``."""
    v, _ = _potential(net, source, sink)
    ceff = effective_conductance(net, source, sink)
    return EdgeFlow(net, net.cond * (v[net.tails] - v[net.heads]) / ceff)


def gauss_green_sides(net, f, phi):
    """``(<grad f, grad phi>_r, <f - P f, phi>_mu)``."""
    f = net.as_array(f)
    phi = net.as_array(phi)
    left = flow_inner(net, gradient(net, f), gradient(net, phi))
    right = float(np.sum(net.mu * (f - net.transition() @ f) * phi))
    return left, right


def gauss_green_check(net, f, phi, tol=1e-10):
    left, right = gauss_green_sides(net, f, phi)
    return abs(left - right) <= tol * max(1.0, abs(left), abs(right))


def random_network(n, rng, extra_edges=None, low=0.1, high=10.0):
    """Connected random network: a random spanning tree plus extra edges."""
    extra = n if extra_edges is None else extra_edges
    verts = list(range(n))
    perm = rng.permutation(n)
    edges = []
    for k in range(1, n):
        edges.append((int(perm[k]), int(perm[rng.integers(k)]), float(rng.uniform(low, high))))
    for _ in range(extra):
        a, b = rng.choice(n, size=2, replace=False)
        edges.append((int(a), int(b), float(rng.uniform(low, high))))
    return FiniteNetwork(verts, edges)
