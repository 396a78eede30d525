"""Wilson's algorithm on boxes of the drifted lattice and rooted at infinity.

A :class:`Forest` is stored as a coordinate array plus a parent-index array
(``-1`` for the root sentinel). Vertices joined to the wired boundary, and the
last vertex of a walk that never hit the forest, point at :data:`ROOT`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from numba import types
from numba.typed import Dict

from . import _kernels
from .errors import DomainError
from .lattice import Vertex, step_deltas, step_probabilities
from .loop_erase import loop_erase_indices
from .rng import stream, vertex_key
from .walk import Path, step_cdf

__all__ = [
    "ROOT",
    "WIRED",
    "FiniteBox",
    "Forest",
    "StackDiagram",
    "VertexTable",
    "ust_finite",
    "ust_batch",
    "wsf_rooted_at_infinity",
    "component_of",
    "component_labels",
    "cutset_crossings",
    "format_forest",
    "parse_forest",
]


class _Sentinel:
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name

    def __reduce__(self):
        return self.name


ROOT = _Sentinel("ROOT")
# the wired boundary of a box is collapsed onto the root
WIRED = ROOT


@dataclass(frozen=True)
class FiniteBox:
    n_min: int
    n_max: int
    x_radius: int
    wired: bool = True

    def __post_init__(self):
        if self.n_min > self.n_max:
            raise DomainError("n_min must not exceed n_max")
        if self.x_radius < 0:
            raise DomainError("x_radius must be nonnegative")

    def contains(self, v):
        return self.n_min <= v.n <= self.n_max and all(abs(c) <= self.x_radius for c in v.x)

    def size(self, d):
        return (self.n_max - self.n_min + 1) * (2 * self.x_radius + 1) ** d

    def vertices(self, d):
        """Interior vertices in lexicographic order."""
        r = range(-self.x_radius, self.x_radius + 1)
        return [Vertex(n, x) for n in range(self.n_min, self.n_max + 1) for x in product(r, repeat=d)]

    def array(self, d):
        return np.array([v.as_tuple() for v in self.vertices(d)], dtype=np.int64).reshape(-1, d + 1)

    def lower(self, d):
        return np.array([self.n_min] + [-self.x_radius] * d, dtype=np.int64)

    def upper(self, d):
        return np.array([self.n_max] + [self.x_radius] * d, dtype=np.int64)


@dataclass
class Forest:
    """A rooted spanning forest.

    ``coords[i]`` is vertex ``i``; ``parent_index[i]`` is the index of its
    parent or -1 for :data:`ROOT`. ``branches[k]`` is the k-th loop-erased
    branch, ending at the vertex it attached to, or at its own last vertex when
    ``branch_to_root[k]`` is set. ``truncated[k]`` marks branches whose walk ran
    out of steps before hitting the forest.
    """

    coords: np.ndarray
    parent_index: np.ndarray
    order: tuple
    branches: list
    branch_to_root: list
    truncated: list
    pop_counts: dict | None = None
    _index: dict | None = field(default=None, repr=False)

    def __len__(self):
        return self.coords.shape[0]

    def __contains__(self, v):
        return v in self.index

    @property
    def index(self):
        if self._index is None:
            self._index = {Vertex.from_seq(row): i for i, row in enumerate(self.coords)}
        return self._index

    def vertex(self, i):
        return Vertex.from_seq(self.coords[i])

    def position(self, v):
        """Row index of ``v``, or -1; avoids building :attr:`index` for one query."""
        if self._index is not None:
            return self._index.get(v, -1)
        hit = np.flatnonzero((self.coords == v.as_array()).all(axis=1))
        return int(hit[0]) if hit.size else -1

    @property
    def parent(self):
        out = {}
        for i, row in enumerate(self.coords):
            j = self.parent_index[i]
            out[Vertex.from_seq(row)] = ROOT if j < 0 else Vertex.from_seq(self.coords[j])
        return out

    def edges(self):
        """Undirected forest edges between vertices, as index pairs."""
        child = np.flatnonzero(self.parent_index >= 0)
        return np.column_stack([child, self.parent_index[child]])


class StackDiagram:
    """Lazily realised per-vertex stacks of moves for Wilson's algorithm.

    The stack at ``v`` is read from ``stream(seed, *vertex_key(v))``, so its
    entries do not depend on the order in which vertices are visited. With
    ``rng`` all stacks are filled from that one generator in pop order: the
    tree law is unchanged but the output then depends on the ordering.
    """

    _BLOCK = 16

    def __init__(self, params, box, seed, rng=None):
        self.params = params
        self.box = box
        self.seed = seed
        self.rng = rng
        self.deltas = step_deltas(params.d, params.lazy)
        self._probs = step_probabilities(params)
        self._streams = {}
        self._buffers = {}
        self.pop_counts = {}

    def _cdf(self, v):
        probs = self._probs
        if not self.box.wired:
            inside = [self.box.contains(Vertex.from_seq(v.as_array() + dl)) for dl in self.deltas]
            probs = np.where(inside, probs, 0.0)
            probs = probs / probs.sum()
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        return cdf

    def _source(self, v):
        if self.rng is not None:
            if self.box.wired:
                if None not in self._streams:
                    self._streams[None] = (self.rng, self._cdf(v))
                return self._streams[None]
            return self._streams.setdefault(v, (self.rng, self._cdf(v)))
        if v not in self._streams:
            self._streams[v] = (stream(self.seed, *vertex_key(v)), self._cdf(v))
        return self._streams[v]

    def pop(self, v):
        """Pop the top of ``v``'s stack and return the neighbour (or ROOT) it names."""
        buf = self._buffers.get(v)
        if buf is None or not buf[1]:
            rng, cdf = self._source(v)
            block = 1 if self.rng is not None else self._BLOCK
            codes = np.searchsorted(cdf, rng.random(block), side="right")
            buf = (cdf, list(codes[::-1]))
            self._buffers[v] = buf
        code = buf[1].pop()
        self.pop_counts[v] = self.pop_counts.get(v, 0) + 1
        dl = self.deltas[code]
        w = Vertex(v.n + int(dl[0]), tuple(c + int(e) for c, e in zip(v.x, dl[1:])))
        return w if self.box.contains(w) else ROOT


def ust_finite(params, box, root=WIRED, ordering=None, seed=0, rng=None):
    """Weighted uniform spanning tree of a box by Wilson's algorithm with stacks.

    With ``box.wired`` the outside of the box is one super-vertex, the root;
    otherwise ``root`` must be an interior vertex and edges leaving the box are
    dropped. For a fixed ``seed`` the tree does not depend on ``ordering``.
    Passing ``rng`` draws every move from that generator instead (faster for
    bulk sampling; see :class:`StackDiagram`).
    """
    verts = box.vertices(params.d)
    vset = set(verts)
    if root is ROOT:
        if not box.wired:
            raise DomainError("a free box needs an interior root vertex")
    else:
        if box.wired:
            raise DomainError("a wired box is rooted at its boundary")
        if root not in vset:
            raise DomainError(f"root {root} is outside the box")
    if ordering is None:
        ordering = verts
    ordering = list(ordering)
    if set(ordering) != vset or len(ordering) != len(vset):
        raise DomainError("ordering must list every interior vertex once")

    stacks = StackDiagram(params, box, seed, rng)
    in_tree = {root}
    nxt = {}
    parent = {}
    branches, to_root = [], []
    for v in ordering:
        u = v
        while u not in in_tree:
            nxt[u] = stacks.pop(u)
            u = nxt[u]
        branch = [v]
        u = v
        while u not in in_tree:
            in_tree.add(u)
            parent[u] = nxt[u]
            u = nxt[u]
            branch.append(u)
        if len(branch) > 1:
            ends_at_root = branch[-1] is ROOT
            if ends_at_root:
                branch.pop()
            branches.append(Path(branch))
            to_root.append(ends_at_root)
    if root is not ROOT:
        parent[root] = ROOT

    index = {v: i for i, v in enumerate(verts)}
    parent_index = np.array(
        [-1 if parent[v] is ROOT else index[parent[v]] for v in verts], dtype=np.int64
    )
    return Forest(
        coords=box.array(params.d),
        parent_index=parent_index,
        order=tuple(ordering),
        branches=branches,
        branch_to_root=to_root,
        truncated=[False] * len(branches),
        pop_counts=dict(stacks.pop_counts),
        _index=index,
    )


def ust_batch(params, box, samples, seed=0):
    """Parent-index arrays of ``samples`` independent wired USTs of ``box``.

    Compiled Wilson's algorithm drawing every move from ``stream(seed)``.
    Row ``s`` is a parent array in the vertex order of ``box.vertices``, with
    -1 for the wired root.
    """
    if not box.wired:
        raise DomainError("ust_batch samples wired boxes")
    verts = box.vertices(params.d)
    index = {v: i for i, v in enumerate(verts)}
    deltas = step_deltas(params.d, params.lazy)
    nbr = np.empty((len(verts), len(deltas)), dtype=np.int64)
    for i, v in enumerate(verts):
        for k, dl in enumerate(deltas):
            w = Vertex(v.n + int(dl[0]), tuple(c + int(e) for c, e in zip(v.x, dl[1:])))
            nbr[i, k] = index.get(w, -1)
    cdf = np.tile(step_cdf(params), (len(verts), 1))
    order = np.arange(len(verts), dtype=np.int64)
    return _kernels.wilson_batch(stream(seed), nbr, cdf, order, int(samples))


class VertexTable:
    """Growable set of lattice vertices with compiled membership lookups."""

    def __init__(self, dim, capacity=1024):
        self.dim = dim
        self.table = Dict.empty(key_type=types.int64, value_type=types.int64)
        self.coords = np.empty((capacity, dim), dtype=np.int64)
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, rows):
        """Insert rows; return the table index of every row."""
        rows = np.ascontiguousarray(rows, dtype=np.int64).reshape(-1, self.dim)
        need = self.size + rows.shape[0]
        if need > self.coords.shape[0]:
            grown = np.empty((max(need, 2 * self.coords.shape[0]), self.dim), dtype=np.int64)
            grown[: self.size] = self.coords[: self.size]
            self.coords = grown
        n = _kernels.table_insert(self.table, self.coords, self.size, rows)
        if n < 0:
            raise RuntimeError("vertex hash collision; please report the seed")
        self.size = n
        return _kernels.table_lookup_rows(self.table, self.coords, rows)

    def lookup(self, row):
        return int(_kernels.table_lookup(self.table, self.coords, np.asarray(row, dtype=np.int64)))

    def __contains__(self, v):
        return self.lookup(v.as_array()) >= 0


def wsf_rooted_at_infinity(params, region=None, ordering=None, horizon=10**5, seed=0, streams=None):
    """Wilson's algorithm rooted at infinity, with walks truncated at ``horizon``.

    Vertices are processed in ``ordering`` (default: the vertices of
    ``region`` in lexicographic order). The walk from ``v`` draws from
    ``streams(v)`` (default ``stream(seed, *vertex_key(v))``) and stops on
    hitting the current forest. A walk that takes ``horizon`` steps without
    hitting is loop-erased, its last vertex is attached to :data:`ROOT`, and
    the branch is flagged as truncated.
    """
    if horizon <= 0:
        raise DomainError("horizon must be positive")
    d = params.d
    if ordering is None:
        if region is None:
            raise DomainError("need a region or an ordering")
        ordering = region.vertices(d)
    ordering = list(ordering)
    if streams is None:
        def streams(v):
            return stream(seed, *vertex_key(v))

    cdf = step_cdf(params)
    deltas = step_deltas(d, params.lazy)
    table = VertexTable(d + 1)
    parent_chunks = []
    branches, to_root, truncated = [], [], []
    for v in ordering:
        start = v.as_array()
        if table.lookup(start) >= 0:
            continue
        pos, hit = _kernels.walk_until_hit(streams(v), cdf, deltas, start, int(horizon), table.table, table.coords)
        keep = loop_erase_indices(pos)
        branch = pos[keep]
        fresh = branch if hit < 0 else branch[:-1]
        idx = table.add(fresh)
        par = np.empty(len(idx), dtype=np.int64)
        par[:-1] = idx[1:]
        par[-1] = -1 if hit < 0 else hit
        parent_chunks.append(par)
        branches.append(Path(branch))
        to_root.append(hit < 0)
        truncated.append(hit < 0)
    parent_index = np.concatenate(parent_chunks) if parent_chunks else np.empty(0, dtype=np.int64)
    return Forest(
        coords=table.coords[: table.size].copy(),
        parent_index=parent_index,
        order=tuple(ordering),
        branches=branches,
        branch_to_root=to_root,
        truncated=truncated,
    )


def component_labels(forest):
    """Index of the tree root (the vertex pointing at ROOT) for every vertex."""
    par = forest.parent_index
    lab = np.where(par < 0, np.arange(len(par)), par)
    while True:
        nxt = lab[lab]
        if np.array_equal(nxt, lab):
            return lab
        lab = nxt


def component_of(forest, z):
    """Component id of ``z``: the root vertex of its tree.

    Edges to :data:`ROOT` do not join trees; querying ROOT returns ROOT.
    """
    if z is ROOT:
        return ROOT
    i = forest.index.get(z)
    if i is None:
        raise DomainError(f"vertex {z} is not in the forest")
    return forest.vertex(int(component_labels(forest)[i]))


def _children(forest):
    par = forest.parent_index
    kids = [[] for _ in range(len(par))]
    for i in np.flatnonzero(par >= 0):
        kids[par[i]].append(int(i))
    return kids


def cutset_crossings(forest, z, p):
    """Number of edge-disjoint forest paths from ``z`` that leave the cylinder.

    The cylinder of radius ``p`` around ``z`` is ``|n - z.n| <= p`` and
    ``||x - z.x|| <= p``; its boundary is the cutset. A path crosses it when it
    reaches a vertex on or beyond the boundary, or the root at infinity. In a
    forest the paths leave ``z`` along distinct edges, so this counts the edges
    at ``z`` whose far side crosses.
    """
    if p < 1:
        raise DomainError("p must be a positive integer")
    r = range(-p, p + 1)
    for dn in r:
        for dx in product(r, repeat=z.dim):
            if sum(c * c for c in dx) <= p * p:
                w = Vertex(z.n + dn, tuple(a + b for a, b in zip(z.x, dx)))
                if w not in forest:
                    raise DomainError(f"forest does not cover the cylinder of radius {p} around {z}")
    zi = forest.index[z]
    rel = forest.coords - z.as_array()
    outside = (np.abs(rel[:, 0]) >= p) | ((rel[:, 1:] ** 2).sum(axis=1) >= p * p)
    kids = _children(forest)
    par = forest.parent_index

    def side_crosses(first):
        # explore the tree from `first` without passing back through z
        stack, seen = [first], {zi, first}
        while stack:
            i = stack.pop()
            if outside[i]:
                return True
            nbrs = list(kids[i])
            if par[i] < 0:
                return True
            nbrs.append(int(par[i]))
            for j in nbrs:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return False

    count = 1 if par[zi] < 0 else int(side_crosses(int(par[zi])))
    for c in kids[zi]:
        count += side_crosses(c)
    return count


def format_forest(forest):
    """Line-oriented text: ``n x1 .. xd -> n' x1' .. xd'`` or ``... -> ROOT``."""
    order = np.lexsort(forest.coords.T[::-1])
    lines = []
    for i in order:
        j = forest.parent_index[i]
        head = " ".join(str(int(c)) for c in forest.coords[i])
        tail = "ROOT" if j < 0 else " ".join(str(int(c)) for c in forest.coords[j])
        lines.append(f"{head} -> {tail}")
    return "\n".join(lines) + "\n"


def parse_forest(text):
    """Inverse of :func:`format_forest`, as a parent map."""
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        head, tail = line.split("->")
        v = Vertex.from_seq(head.split())
        out[v] = ROOT if tail.strip() == "ROOT" else Vertex.from_seq(tail.split())
    return out
