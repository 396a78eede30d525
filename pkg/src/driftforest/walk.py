"""Samplers for the network random walk and its one-dimensional projection.

All samplers take an explicit ``numpy.random.Generator`` (see :mod:`.rng`) and
consume exactly one uniform per discrete step, so a path is a pure function of
``(params, start, stream state)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError
from .lattice import LatticeParams, Vertex, step_deltas, step_probabilities

__all__ = [
    "Path",
    "WalkerState",
    "CtWalkSample",
    "LevelTarget",
    "VertexTarget",
    "step_cdf",
    "sample_codes",
    "sample_positions",
    "sample_path",
    "hitting_time_set",
    "level_visits",
    "return_never_probability",
    "drift_tail_bound",
    "splitting_levels",
    "sample_ct_walk",
    "ct_level_passage_time",
    "coupling_laws",
    "sample_coupled_pair",
]


class Path:
    """A finite walk trajectory stored as an ``(m, d + 1)`` integer array."""

    __slots__ = ("array",)

    def __init__(self, vertices):
        if isinstance(vertices, np.ndarray):
            arr = np.asarray(vertices, dtype=np.int64)
        else:
            arr = np.array([v.as_tuple() for v in vertices], dtype=np.int64)
        if arr.ndim != 2:
            raise DomainError("a path needs at least one vertex")
        self.array = arr

    @property
    def vertices(self):
        return [Vertex.from_seq(row) for row in self.array]

    @property
    def levels(self):
        return self.array[:, 0]

    def __len__(self):
        return self.array.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Path(self.array[i])
        return Vertex.from_seq(self.array[i])

    def __eq__(self, other):
        return isinstance(other, Path) and np.array_equal(self.array, other.array)

    def __repr__(self):
        return f"Path(len={len(self)})"


@dataclass
class WalkerState:
    position: Vertex
    steps_taken: int
    rng_stream: np.random.Generator = field(repr=False)


@dataclass
class CtWalkSample:
    jump_times: np.ndarray
    positions: list


@dataclass(frozen=True)
class LevelTarget:
    """The hyperplane ``{n = level}``."""

    level: int

    def __call__(self, v):
        return v.n == self.level


@dataclass(frozen=True)
class VertexTarget:
    vertices: frozenset

    def __call__(self, v):
        return v in self.vertices


def step_cdf(params):
    cdf = np.cumsum(step_probabilities(params))
    cdf[-1] = 1.0
    return cdf


def sample_codes(params, size, rng):
    return np.searchsorted(step_cdf(params), rng.random(size), side="right").astype(np.int8)


def sample_positions(params, start, nsteps, rng):
    """Positions ``S_0..S_nsteps`` as an ``(nsteps + 1, d + 1)`` array."""
    return _kernels.walk_positions(
        rng, step_cdf(params), step_deltas(params.d, params.lazy), start.as_array(), int(nsteps)
    )


def sample_path(params, start, stop, max_steps, stream):
    """Run the walk from ``start`` until ``stop(state)`` holds or ``max_steps``.

    Returns ``(path, stopped)``; ``stopped`` is False when the walk was
    truncated at ``max_steps`` without meeting the stopping rule.
    """
    if max_steps < 0:
        raise DomainError("max_steps must be nonnegative")
    cdf = step_cdf(params)
    deltas = step_deltas(params.d, params.lazy)
    pos = start.as_array()
    rows = [pos.copy()]
    state = WalkerState(start, 0, stream)
    if stop(state):
        return Path(np.array(rows)), True
    for m in range(1, max_steps + 1):
        k = int(np.searchsorted(cdf, stream.random(), side="right"))
        pos = pos + deltas[k]
        rows.append(pos)
        state.position = Vertex.from_seq(pos)
        state.steps_taken = m
        if stop(state):
            return Path(np.array(rows)), True
    return Path(np.array(rows)), False


def hitting_time_set(params, start, target, max_steps, stream):
    """First index at which the walk is in ``target``, or None within ``max_steps``.

    ``target`` is any vertex predicate; a :class:`LevelTarget` runs on a
    compiled path that only tracks the drifted coordinate.
    """
    if max_steps < 0:
        raise DomainError("max_steps must be nonnegative")
    if isinstance(target, LevelTarget):
        t = _kernels.level_hitting_time(stream, step_cdf(params), start.n, target.level, int(max_steps))
        return None if t < 0 else int(t)
    path, stopped = sample_path(params, start, lambda s: target(s.position), max_steps, stream)
    return len(path) - 1 if stopped else None


def level_visits(params, start, level, max_steps, stream):
    """Number of times ``0..max_steps`` at which the drifted coordinate equals ``level``."""
    if max_steps < 0:
        raise DomainError("max_steps must be nonnegative")
    return int(_kernels.level_visit_count(stream, step_cdf(params), start.n, int(level), int(max_steps)))


def return_never_probability(params):
    """``P(no return to level 0)`` for the projected walk: up minus down probability."""
    probs = step_probabilities(params)
    return float(probs[0] - probs[1])


def drift_tail_bound(params, k):
    """Chance the walk ever drops ``k`` levels below its start: ``(q/p)^k``."""
    return math.exp(-params.lam * k)


def splitting_levels(path, lo, hi):
    """Levels in ``[lo, hi]`` whose drifted coordinate is visited exactly once."""
    if lo > hi:
        raise DomainError("empty level range")
    levels, counts = np.unique(path.levels, return_counts=True)
    sel = (counts == 1) & (levels >= lo) & (levels <= hi)
    return {int(h) for h in levels[sel]}


def sample_ct_walk(params, start, t_max, stream):
    """Continuous-time walk: unit-rate Poisson jump times on ``[0, t_max]``."""
    if not t_max > 0:
        raise DomainError("t_max must be positive")
    times = []
    t = stream.standard_exponential()
    while t <= t_max:
        times.append(t)
        t += stream.standard_exponential()
    times = np.array(times)
    codes = sample_codes(params, len(times), stream)
    deltas = step_deltas(params.d, params.lazy)
    pos = np.vstack([start.as_array(), start.as_array() + np.cumsum(deltas[codes], axis=0)])
    return CtWalkSample(times, [Vertex.from_seq(p) for p in pos[1:]])


def ct_level_passage_time(params, start, level, stream, max_jumps=10**7):
    """First continuous time at which the drifted coordinate equals ``level``."""
    t, _ = _kernels.ct_level_passage(stream, step_cdf(params), start.n, int(level), int(max_jumps))
    return t


def coupling_laws(params):
    """Coordinate-selector law and per-coordinate step laws of the lazy walk.

    Returns ``(selector, laws)`` where ``selector[i]`` is the chance that a step
    acts on coordinate ``i`` (0 is the drifted one) and ``laws[i]`` gives the
    probabilities of moving that coordinate by ``-1, 0, +1``.
    """
    d = params.d
    norm = params.normalizer
    el = math.exp(params.lam)
    idle = 1.0 / (2 * (d + 1))
    selector = np.empty(d + 1)
    laws = np.empty((d + 1, 3))
    selector[0] = (1 + el) / (2 * norm) + idle
    laws[0] = [1 / (2 * norm), idle, el / (2 * norm)] / selector[0]
    for i in range(1, d + 1):
        selector[i] = 1 / norm + idle
        laws[i] = [1 / (2 * norm), idle, 1 / (2 * norm)] / selector[i]
    return selector, laws


def sample_coupled_pair(params, start_a, start_b, max_steps, stream, stop_at_coupling=False):
    """Two lazy walks coupled one coordinate at a time.

    Each step picks a coordinate ``F`` from the shared selector law. The first
    coordinate (in index order) where the walks still differ moves
    independently in each walk; every other coordinate moves identically. Once
    all coordinates agree the walks move together.

    Returns ``(path_a, path_b, coupling_time)`` with ``coupling_time`` None if
    the walks have not met within ``max_steps``.
    """
    if not params.lazy:
        raise DomainError("the coupling needs the lazy walk")
    selector, laws = coupling_laws(params)
    sel_cdf = np.cumsum(selector)
    sel_cdf[-1] = 1.0
    law_cdf = np.cumsum(laws, axis=1)
    law_cdf[:, -1] = 1.0
    pa, pb, tau = _kernels.coupled_walks(
        stream, sel_cdf, law_cdf, start_a.as_array(), start_b.as_array(),
        int(max_steps), bool(stop_at_coupling),
    )
    return Path(pa), Path(pb), (None if tau < 0 else int(tau))
