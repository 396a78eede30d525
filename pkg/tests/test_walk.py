import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from driftforest.errors import DomainError
from driftforest.lattice import LatticeParams, Vertex, moments, step_deltas, step_probabilities
from driftforest.rng import stream
from driftforest.walk import (
    LevelTarget,
    Path,
    VertexTarget,
    ct_level_passage_time,
    drift_tail_bound,
    hitting_time_set,
    level_visits,
    return_never_probability,
    sample_coupled_pair,
    sample_ct_walk,
    sample_path,
    sample_positions,
    splitting_levels,
)

LN2 = math.log(2)
P1 = LatticeParams(1, LN2)
O1 = Vertex.origin(1)


def step_codes(params, path):
    """Recover step codes from consecutive differences."""
    deltas = step_deltas(params.d, params.lazy)
    diffs = np.diff(path, axis=0)
    lookup = {tuple(dl): k for k, dl in enumerate(deltas)}
    return np.array([lookup[tuple(r)] for r in diffs])


def test_sample_path_immediate_stop():
    path, stopped = sample_path(P1, O1, lambda s: True, 10, stream(0))
    assert stopped and len(path) == 1 and path[0] == O1


def test_sample_path_truncation_flag():
    path, stopped = sample_path(P1, O1, lambda s: False, 25, stream(0))
    assert not stopped and len(path) == 26
    with pytest.raises(DomainError):
        sample_path(P1, O1, lambda s: True, -1, stream(0))


def test_sample_path_deterministic():
    a, _ = sample_path(P1, O1, lambda s: s.steps_taken >= 50, 100, stream(9, 1))
    b, _ = sample_path(P1, O1, lambda s: s.steps_taken >= 50, 100, stream(9, 1))
    assert a == b
    c, _ = sample_path(P1, O1, lambda s: s.steps_taken >= 50, 100, stream(9, 2))
    assert a != c


def test_sample_path_agrees_with_compiled_walk():
    path, _ = sample_path(P1, O1, lambda s: False, 300, stream(4))
    fast = sample_positions(P1, O1, 300, stream(4))
    assert np.array_equal(path.array, fast)


def test_paths_are_nearest_neighbour():
    for params in (LatticeParams(3, 0.5), LatticeParams(2, 0.5, lazy=True)):
        pos = sample_positions(params, Vertex.origin(params.d), 5000, stream(1))
        steps = np.abs(np.diff(pos, axis=0)).sum(axis=1)
        assert set(np.unique(steps)) <= ({0, 1} if params.lazy else {1})


def test_one_level_up_with_strong_drift():
    p = LatticeParams(1, 6.0)
    lens = [len(sample_path(p, O1, lambda s: s.position.n == 1, 1000, stream(2, i))[0]) - 1 for i in range(2000)]
    assert 1.0 <= np.mean(lens) < 1.1


def test_hitting_time_at_start():
    assert hitting_time_set(P1, O1, LevelTarget(0), 10, stream(0)) == 0
    assert hitting_time_set(P1, O1, VertexTarget(frozenset({O1})), 10, stream(0)) == 0


def test_hitting_time_generic_matches_level_kernel():
    for i in range(30):
        t1 = hitting_time_set(P1, O1, LevelTarget(3), 500, stream(5, i))
        t2 = hitting_time_set(P1, O1, lambda v: v.n == 3, 500, stream(5, i))
        assert t1 == t2


def test_hit_level_below_probability():
    # P(ever reach n = -1) = q/p = 1/2
    trials = 10_000
    hits = np.array([hitting_time_set(P1, O1, LevelTarget(-1), 10**5, stream(11, i)) is not None for i in range(trials)])
    se = math.sqrt(0.25 / trials)
    assert abs(hits.mean() - 0.5) <= 3 * se + drift_tail_bound(P1, 1) * 0


def test_hit_level_above_probability_grows():
    probs = []
    for m in (1, 4, 32):
        hits = [hitting_time_set(P1, O1, LevelTarget(1), m, stream(12, i)) is not None for i in range(2000)]
        probs.append(np.mean(hits))
    assert probs[0] < probs[1] < probs[2]
    assert probs[2] > 0.95


def test_return_never_probability():
    assert return_never_probability(P1) == pytest.approx(0.2, abs=1e-12)
    assert return_never_probability(LatticeParams(1, LN2, lazy=True)) == pytest.approx(0.1, abs=1e-12)
    assert return_never_probability(LatticeParams(4, 1e-10)) < 1e-10


def test_drift_tail_bound():
    assert drift_tail_bound(P1, 3) == pytest.approx(0.125)


def test_splitting_levels_examples():
    p = Path(np.array([[0, 0], [1, 0], [2, 0]]))
    assert splitting_levels(p, 0, 2) == {0, 1, 2}
    assert splitting_levels(p, 1, 5) == {1, 2}
    p = Path(np.array([[0, 0], [1, 0], [0, 0], [1, 0], [2, 0]]))
    assert splitting_levels(p, 0, 2) == {2}
    with pytest.raises(DomainError):
        splitting_levels(p, 3, 2)


@given(st.lists(st.integers(-1, 1), min_size=0, max_size=60), st.integers(-5, 5), st.integers(0, 8))
def test_splitting_levels_brute_force(moves, lo, width):
    levels = np.concatenate([[0], np.cumsum(moves)]).astype(np.int64)
    path = Path(np.column_stack([levels, np.zeros_like(levels)]))
    hi = lo + width
    want = {h for h in range(lo, hi + 1) if sum(1 for n in levels if n == h) == 1}
    assert splitting_levels(path, lo, hi) == want


def test_exactly_one_visit_to_start_level():
    trials = 10_000
    once = np.array([level_visits(P1, O1, 0, 10**5, stream(13, i)) == 1 for i in range(trials)])
    pq = return_never_probability(P1)
    se = math.sqrt(pq * (1 - pq) / trials)
    # a return after 10^5 steps needs a drop of about a * 10^5 levels
    late = drift_tail_bound(P1, int(moments(P1).a * 10**5 / 2))
    assert abs(once.mean() - pq) <= 3 * se + late


def test_ct_walk_jump_count():
    T = 50.0
    counts = np.array([len(sample_ct_walk(P1, O1, T, stream(14, i)).jump_times) for i in range(1000)])
    assert abs(counts.mean() - T) <= 3 * math.sqrt(T / 1000)
    s = sample_ct_walk(P1, O1, T, stream(1))
    assert np.all(np.diff(s.jump_times) > 0) and s.jump_times[-1] <= T
    with pytest.raises(DomainError):
        sample_ct_walk(P1, O1, 0.0, stream(1))


def test_ct_walk_positions_are_neighbours():
    s = sample_ct_walk(LatticeParams(2, 1.0), Vertex.origin(2), 200.0, stream(3))
    seq = [Vertex.origin(2)] + s.positions
    for a, b in zip(seq, seq[1:]):
        assert sum(abs(c) for c in (b - a).as_tuple()) == 1


def test_ct_passage_time_mean():
    times = np.array([ct_level_passage_time(P1, O1, 1, stream(15, i)) for i in range(10_000)])
    se = times.std(ddof=1) / math.sqrt(len(times))
    assert abs(times.mean() - 1 / moments(P1).a) <= 3 * se


@pytest.mark.parametrize("params", [LatticeParams(1, LN2), LatticeParams(2, LN2), LatticeParams(3, 1.3, lazy=True)])
def test_step_frequencies_chi_square(params):
    pos = sample_positions(params, Vertex.origin(params.d), 10**5, stream(16, params.d))
    counts = np.bincount(step_codes(params, pos), minlength=len(step_probabilities(params)))
    assert chisquare(counts, 10**5 * step_probabilities(params)).pvalue > 0.001


LAZY1 = LatticeParams(1, LN2, lazy=True)


def test_coupled_pair_requires_lazy():
    with pytest.raises(DomainError):
        sample_coupled_pair(P1, O1, O1, 10, stream(0))


def test_coupled_pair_same_start():
    a, b, tau = sample_coupled_pair(LAZY1, O1, O1, 200, stream(0))
    assert tau == 0 and a == b


def test_coupled_pairs_meet_and_stay_together():
    # the 1-D difference walk is recurrent: P(tau > t) decays like t^(-1/2)
    taus = []
    for i in range(400):
        a, b, tau = sample_coupled_pair(LAZY1, O1, Vertex(0, (2,)), 10**5, stream(17, i), stop_at_coupling=True)
        taus.append(math.inf if tau is None else tau)
    taus = np.array(taus)
    frac = [np.mean(taus <= m) for m in (10**2, 10**3, 10**4, 10**5)]
    assert all(x < y for x, y in zip(frac, frac[1:]))
    assert frac[-1] >= 0.97
    a, b, tau = sample_coupled_pair(LAZY1, O1, Vertex(0, (2,)), 5000, stream(18))
    assert tau is not None and a[tau:] == b[tau:]
    assert a[: tau] != b[: tau]


def test_coupled_pair_high_dimension_meets():
    p = LatticeParams(2, LN2, lazy=True)
    a, b, tau = sample_coupled_pair(p, Vertex.origin(2), Vertex(3, (1, -2)), 10**5, stream(19))
    assert tau is not None and a[tau:] == b[tau:]


def test_coupled_pair_marginals():
    a, b, tau = sample_coupled_pair(LAZY1, O1, Vertex(0, (40,)), 10**5, stream(20))
    probs = step_probabilities(LAZY1)
    for path in (a, b):
        counts = np.bincount(step_codes(LAZY1, path.array), minlength=len(probs))
        assert chisquare(counts, counts.sum() * probs).pvalue > 0.001


def test_coupled_pair_deterministic():
    r1 = sample_coupled_pair(LAZY1, O1, Vertex(1, (1,)), 300, stream(21))
    r2 = sample_coupled_pair(LAZY1, O1, Vertex(1, (1,)), 300, stream(21))
    assert r1[0] == r2[0] and r1[1] == r2[1] and r1[2] == r2[2]
