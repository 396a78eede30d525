"""Monte Carlo experiments built from the samplers and solvers.

Each experiment returns :class:`EstimateRow` objects. Sample ``i`` draws from
streams keyed by ``(seed, i, ...)`` so every run is reproducible and samples
can be evaluated in any order, or on several threads (``DRIFTFOREST_THREADS``).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import _kernels
from .errors import DomainError
from .lattice import LatticeParams, Vertex, eta, moments, spread, step_deltas
from .loop_erase import loop_erase_indices, pack_rows
from .rng import stream, vertex_key
from .walk import step_cdf
from .wilson import FiniteBox, component_labels, cutset_crossings, wsf_rooted_at_infinity

__all__ = [
    "ExperimentConfig",
    "EstimateRow",
    "horizon_tail_bound",
    "intersection_curve",
    "intersections_experiment",
    "connectivity_experiment",
    "crossing_regions",
    "crossings_experiment",
    "spread_bound_experiment",
    "separation_experiment",
    "one_end_diagnostic",
    "fit_inverse_p",
    "rows_to_csv",
    "rows_to_json",
    "write_rows",
]

THREADS_ENV = "DRIFTFOREST_THREADS"


@dataclass
class ExperimentConfig:
    """Shared experiment settings.

    ``box`` is the observation window of forest-based experiments. ``k0``,
    ``crossing_base`` and ``crossing_cap`` shape the crossing regions (see
    :func:`crossing_regions`).
    """

    params: LatticeParams
    seed: int = 0
    samples: int = 10_000
    horizon: int = 100_000
    box: FiniteBox = field(default_factory=lambda: FiniteBox(-64, 128, 64))
    output_path: str | None = None
    format: str = "csv"
    k0: int = 1
    crossing_base: int = 3
    crossing_cap: int = 2

    def __post_init__(self):
        if self.samples < 1:
            raise DomainError("samples must be at least 1")
        if self.horizon < 1:
            raise DomainError("horizon must be at least 1")
        if self.format not in ("csv", "json"):
            raise DomainError(f"unknown format {self.format!r}")
        if self.k0 < 1:
            raise DomainError("k0 must be a positive integer")
        if self.crossing_base ** self.k0 <= self.crossing_cap:
            raise DomainError("crossing regions overlap: need crossing_base**k0 > crossing_cap")


@dataclass
class EstimateRow:
    label: str
    value: float
    std_error: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.std_error >= 0 and not math.isnan(self.value):
            raise DomainError("std_error must be nonnegative")

    def as_dict(self):
        return {"label": self.label, "value": self.value, "std_error": self.std_error, "meta": dict(self.meta)}


def _threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, n):
    """``[fn(i) for i in range(n)]``, on a thread pool when configured."""
    k = _threads()
    if k == 1 or n < 2:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=k) as pool:
        return list(pool.map(fn, range(n)))


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def horizon_tail_bound(params, horizon, level=0):
    """Bound on the chance that a walk from level 0 is at or below ``level`` after ``horizon`` steps.

    Either the walk is below half its mean displacement at the horizon
    (Hoeffding, ``exp(-a^2 H / 2)``) or it later drops back the remaining
    distance (``(q/p)^k``).
    """
    a = moments(params).a
    if params.lazy:
        a /= 2
    k = max(0, math.floor(a * horizon / 2) - level)
    return min(1.0, math.exp(-params.lam * k) + math.exp(-a * a * horizon / 2))


def _walk(params, rng, start, nsteps):
    return _kernels.walk_positions(
        rng, step_cdf(params), step_deltas(params.d, params.lazy), np.asarray(start, dtype=np.int64), int(nsteps)
    )


def _meet_time(ka, kb, oa, ob):
    ua, ia = np.unique(ka, return_index=True)
    ub, ib = np.unique(kb, return_index=True)
    _, xa, xb = np.intersect1d(ua, ub, assume_unique=True, return_indices=True)
    if xa.size == 0:
        return math.inf
    return int(np.min(np.maximum(ia[xa] + oa, ib[xb] + ob)))


def _first_intersection(a, b, include_start):
    """Least ``max(p, q)`` over time pairs with ``a[p] == b[q]``.

    The pair ``(0, 0)`` is skipped unless ``include_start``.
    """
    ka, kb = pack_rows(a, b)
    if include_start:
        return _meet_time(ka, kb, 0, 0)
    return min(_meet_time(ka[1:], kb, 1, 0), _meet_time(ka, kb[1:], 0, 1))


def _intersection_count(a, b, include_start):
    ka, kb = pack_rows(a, b)
    ua, ca = np.unique(ka, return_counts=True)
    ub, cb = np.unique(kb, return_counts=True)
    _, xa, xb = np.intersect1d(ua, ub, assume_unique=True, return_indices=True)
    k = int(np.sum(ca[xa].astype(np.int64) * cb[xb]))
    if not include_start and np.array_equal(a[0], b[0]):
        k -= 1
    return k


def _pair_meet_time(config, i, start_a, start_b, horizon, include_start, first_chunk=1024):
    """First intersection time of the walk pair of sample ``i``, inf if none by ``horizon``.

    Walks are extended in doubling chunks and stop early once they meet; the
    streams are consumed in order, so the prefix is the same as a single run.
    """
    params = config.params
    ra, rb = stream(config.seed, i, 0), stream(config.seed, i, 1)
    length = min(first_chunk, horizon)
    a = _walk(params, ra, start_a.as_array(), length)
    b = _walk(params, rb, start_b.as_array(), length)
    while True:
        t = _first_intersection(a, b, include_start)
        if t <= length or length >= horizon:
            return t if t <= horizon else math.inf
        extra = min(length, horizon - length)
        a = np.vstack([a, _walk(params, ra, a[-1], extra)[1:]])
        b = np.vstack([b, _walk(params, rb, b[-1], extra)[1:]])
        length += extra


def intersection_curve(config, start_a, start_b, horizons, include_start=False):
    """P(the two walk paths meet within h steps) for every h in ``horizons``.

    Uses the same walk pairs for every horizon, so the estimates are
    nondecreasing in h. Only nontrivial meetings count: a shared start is
    ignored unless ``include_start``.
    """
    horizons = sorted(int(h) for h in horizons)
    if not horizons or horizons[0] < 1:
        raise DomainError("horizons must be positive")
    params = config.params
    top = horizons[-1]
    times = np.array(_map(lambda i: _pair_meet_time(config, i, start_a, start_b, top, include_start), config.samples))
    rows = []
    for h in horizons:
        p, se = _mean_se(times <= h)
        rows.append(
            EstimateRow(
                "intersection_probability",
                p,
                se,
                {
                    "d": params.d,
                    "lambda": params.lam,
                    "horizon": h,
                    "samples": config.samples,
                    "truncation_bound": horizon_tail_bound(params, h),
                },
            )
        )
    return rows


def intersections_experiment(config, start_a, start_b, include_start=False, count=True):
    """Probability that two independent walk paths meet within the horizon.

    With ``count`` the mean number of meeting time pairs ``K`` and its second
    moment are reported too; this needs the full walks.
    """
    params = config.params
    if not count:
        return intersection_curve(config, start_a, start_b, [config.horizon], include_start)[0]

    def one(i):
        a = _walk(params, stream(config.seed, i, 0), start_a.as_array(), config.horizon)
        b = _walk(params, stream(config.seed, i, 1), start_b.as_array(), config.horizon)
        return _intersection_count(a, b, include_start)

    k = np.array(_map(one, config.samples), dtype=float)
    p, se = _mean_se(k > 0)
    mk, sek = _mean_se(k)
    return EstimateRow(
        "intersection_probability",
        p,
        se,
        {
            "d": params.d,
            "lambda": params.lam,
            "horizon": config.horizon,
            "samples": config.samples,
            "mean_K": mk,
            "mean_K_se": sek,
            "mean_K2": float(np.mean(k * k)),
            "truncation_bound": horizon_tail_bound(params, config.horizon),
        },
    )


def connectivity_experiment(config, z):
    """P(0 and z in one tree) from the first two Wilson branches.

    The first branch is the loop erasure of a walk from 0; ``z`` joins it iff
    the walk from ``z`` hits that branch within the horizon. The number ``K``
    of meeting time pairs of the two full walks gives the second-moment bound
    ``P(K > 0) >= E[K]^2 / (4 E[K^2])``, reported in the metadata.
    """
    params = config.params
    if params.d < 3:
        raise DomainError("for d < 3 every pair is connected")
    origin = Vertex.origin(params.d)
    if z == origin:
        return EstimateRow(
            "connectivity", 1.0, 0.0,
            {"d": params.d, "eta": 0.0, "samples": config.samples, "horizon": config.horizon,
             "p_intersect": 1.0, "mean_K": math.inf, "mean_K2": math.inf, "second_moment_bound": 1.0,
             "second_moment_holds": True, "truncation_bound": 0.0},
        )

    def one(i):
        s0 = _walk(params, stream(config.seed, i, 0), origin.as_array(), config.horizon)
        sz = _walk(params, stream(config.seed, i, 1), z.as_array(), config.horizon)
        le = s0[loop_erase_indices(s0)]
        k0, kz, kl = pack_rows(s0, sz, le)
        joined = bool(np.isin(kz, kl).any())
        ua, ca = np.unique(k0, return_counts=True)
        ub, cb = np.unique(kz, return_counts=True)
        _, xa, xb = np.intersect1d(ua, ub, assume_unique=True, return_indices=True)
        return joined, int(np.sum(ca[xa].astype(np.int64) * cb[xb]))

    res = _map(one, config.samples)
    joined = np.array([r[0] for r in res], dtype=float)
    k = np.array([r[1] for r in res], dtype=float)
    p, se = _mean_se(joined)
    p_int = float(np.mean(k > 0))
    ek, ek2 = float(k.mean()), float(np.mean(k * k))
    bound = ek * ek / (4 * ek2) if ek2 > 0 else 0.0
    return EstimateRow(
        "connectivity",
        p,
        se,
        {
            "d": params.d,
            "eta": eta(z),
            "samples": config.samples,
            "horizon": config.horizon,
            "p_intersect": p_int,
            "mean_K": ek,
            "mean_K2": ek2,
            "second_moment_bound": bound,
            "second_moment_holds": p_int >= bound,
            "truncation_bound": horizon_tail_bound(params, config.horizon),
        },
    )


def crossing_regions(config, p):
    """Testing region ``D`` and separating cylinder ``U`` for scale ``p``.

    With ``s = crossing_base ** (p * k0)``: ``D = {s < n <= 2 s, |x|^2 <= s}``
    and ``U = {|n| <= crossing_cap * s, |x|^2 <= crossing_base ** ((p + 1) * k0)}``.
    Base 9 with cap 4 gives the regions used in the theory; smaller bases
    keep the same shapes at reachable scales.
    """
    s = config.crossing_base ** (p * config.k0)
    return {
        "d_lo": s,
        "d_hi": 2 * s,
        "d_r2": s,
        "u_n": config.crossing_cap * s,
        "u_r2": config.crossing_base ** ((p + 1) * config.k0),
    }


def _exit_times(path, regions):
    """First index outside each cylinder ``U``, or -1 if the path stays inside."""
    n = np.abs(path[:, 0])
    r2 = (path[:, 1:] ** 2).sum(axis=1)
    out = []
    for reg in regions:
        idx = np.flatnonzero((n > reg["u_n"]) | (r2 > reg["u_r2"]))
        out.append(int(idx[0]) if idx.size else -1)
    return out


def _sectioned_walk(params, rng, start, regions, horizon):
    """Walk until it leaves the last cylinder or runs ``horizon`` steps."""
    chunk = 4096
    path = _walk(params, rng, start, min(chunk, horizon))
    while len(path) - 1 < horizon:
        last = regions[-1]
        if abs(path[-1, 0]) > last["u_n"] or (path[-1, 1:] ** 2).sum() > last["u_r2"]:
            break
        extra = min(chunk, horizon - (len(path) - 1))
        path = np.vstack([path, _walk(params, rng, path[-1], extra)[1:]])
        chunk *= 2
    return path


def crossings_experiment(config, p_range, start_a=None, start_b=None):
    """Probability that walk sections cross inside the testing region, per scale ``p``.

    Section ``p`` of a walk runs from its exit of ``U`` at scale ``p - 1`` to
    its exit at scale ``p``; ``M_p`` counts meetings of the two sections inside
    ``D`` at scale ``p``. Rows report ``P(M_p > 0)``. A section whose walk
    never leaves the cylinder within the horizon is cut at the horizon and
    counted in ``truncated``.
    """
    params = config.params
    if params.d != 2:
        raise DomainError("the crossing experiment is defined for d = 2")
    ps = sorted(int(p) for p in p_range)
    if not ps or ps[0] < 1:
        raise DomainError("p must be positive")
    start_a = start_a or Vertex.origin(2)
    start_b = start_b or Vertex.origin(2)
    regions = [crossing_regions(config, p) for p in range(0, ps[-1] + 1)]

    def one(i):
        a = _sectioned_walk(params, stream(config.seed, i, 0), start_a.as_array(), regions, config.horizon)
        b = _sectioned_walk(params, stream(config.seed, i, 1), start_b.as_array(), regions, config.horizon)
        ta, tb = _exit_times(a, regions), _exit_times(b, regions)
        ka, kb = pack_rows(a, b)
        hits, cut = [], []
        for p in ps:
            reg = regions[p]
            sa = slice(max(ta[p - 1], 0), (ta[p] if ta[p] >= 0 else len(a) - 1) + 1)
            sb = slice(max(tb[p - 1], 0), (tb[p] if tb[p] >= 0 else len(b) - 1) + 1)
            ina = _in_d(a[sa], reg)
            inb = _in_d(b[sb], reg)
            hits.append(bool(np.isin(ka[sa][ina], kb[sb][inb]).any()))
            cut.append(ta[p] < 0 or tb[p] < 0)
        return hits, cut

    res = _map(one, config.samples)
    hits = np.array([r[0] for r in res], dtype=float)
    cut = np.array([r[1] for r in res])
    rows = []
    for j, p in enumerate(ps):
        q, se = _mean_se(hits[:, j])
        reg = regions[p]
        rows.append(
            EstimateRow(
                "crossing_probability",
                q,
                se,
                {
                    "p": p,
                    "k0": config.k0,
                    "base": config.crossing_base,
                    "cap": config.crossing_cap,
                    "d_n_lo": reg["d_lo"],
                    "d_n_hi": reg["d_hi"],
                    "samples": config.samples,
                    "horizon": config.horizon,
                    "truncated": int(cut[:, j].sum()),
                    "truncation_bound": horizon_tail_bound(params, config.horizon, reg["u_n"]),
                },
            )
        )
    return rows


def _in_d(rows, reg):
    n = rows[:, 0]
    r2 = (rows[:, 1:] ** 2).sum(axis=1)
    return (n > reg["d_lo"]) & (n <= reg["d_hi"]) & (r2 <= reg["d_r2"])


def fit_inverse_p(ps, values):
    """Least-squares fit ``value = a / p``; returns ``(a, r_squared)``."""
    x = 1.0 / np.asarray(ps, dtype=float)
    y = np.asarray(values, dtype=float)
    a = float(x @ y / (x @ x))
    ss_res = float(np.sum((y - a * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return a, (1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0)


def _forest_streams(seed, *key):
    def streams(v):
        return stream(seed, *key, *vertex_key(v))

    return streams


def _labels_of(forest, vertices):
    lab = component_labels(forest)
    return [int(lab[forest.position(v)]) for v in vertices]


def spread_bound_experiment(config, vertices, constant=None):
    """P(all of ``vertices`` in one tree), from Wilson runs started at them.

    Each sample runs Wilson's algorithm rooted at infinity with only the given
    vertices in the ordering. ``constant`` is the C in the bound
    ``C * spread^-(d-2)``; when omitted it is fitted as the largest
    ``P(pair) * spread(pair)^(d-2)`` over the pairs, estimated from the same
    forests.
    """
    params = config.params
    w = list(dict.fromkeys(vertices))
    if params.d < 3:
        raise DomainError("the spread bound is stated for d >= 3")
    if not 1 <= len(w) <= 5:
        raise DomainError("need between 1 and 5 vertices")
    tree = spread(set(w))
    base_meta = {"d": params.d, "size": len(w), "spread": tree.product, "samples": config.samples,
                 "horizon": config.horizon, "truncation_bound": horizon_tail_bound(params, config.horizon)}
    if len(w) == 1:
        return EstimateRow("same_component", 1.0, 0.0, dict(base_meta, constant=constant or 1.0, bound=1.0, within_bound=True))

    def one(i):
        f = wsf_rooted_at_infinity(params, ordering=w, horizon=config.horizon, streams=_forest_streams(config.seed, i))
        return _labels_of(f, w)

    labels = np.array(_map(one, config.samples))
    allin = (labels == labels[:, :1]).all(axis=1)
    p, se = _mean_se(allin)
    pairs = {}
    for a, b in combinations(range(len(w)), 2):
        pairs[(a, b)] = float(np.mean(labels[:, a] == labels[:, b]))
    if constant is None:
        constant = max(
            pairs[(a, b)] * spread({w[a], w[b]}).product ** (params.d - 2) for a, b in pairs
        )
    bound = constant * tree.product ** (-(params.d - 2))
    return EstimateRow(
        "same_component",
        p,
        se,
        dict(base_meta, constant=constant, bound=bound, within_bound=p <= bound + 3 * se),
    )


def _row_view(a):
    """Rows as opaque fixed-width values, comparable across arrays."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    return a.view(np.dtype((np.void, 8 * a.shape[1]))).ravel()


def separation_experiment(config, z, z2, m):
    """P(z2 is reached from z by composing m + 1 independent forests).

    Forest ``j`` is sampled on the window ``config.box`` with ``z`` and ``z2``
    first in the ordering. The reached set starts as the tree of ``z`` in
    forest 0; forest ``j`` adds every tree that meets it. This is a lower-bound
    proxy for ``P(D(z, z2) <= m)``.
    """
    params = config.params
    if params.d < 3:
        raise DomainError("the separation experiment is stated for d >= 3")
    if m < 0:
        raise DomainError("m must be nonnegative")
    ordering = [z, z2] + [v for v in config.box.vertices(params.d) if v != z and v != z2]

    def one(i):
        reached = None
        for j in range(m + 1):
            f = wsf_rooted_at_infinity(
                params, ordering=ordering, horizon=config.horizon, streams=_forest_streams(config.seed, i, j)
            )
            lab = component_labels(f)
            keys = _row_view(f.coords)
            if reached is None:
                hit_labels = {int(lab[f.position(z)])}
            else:
                hit_labels = set(lab[np.isin(keys, reached)].tolist())
            grown = keys[np.isin(lab, list(hit_labels))]
            reached = grown if reached is None else np.union1d(reached, grown)
            if int(lab[f.position(z2)]) in hit_labels:
                return True
        return False

    hits = np.array(_map(one, config.samples), dtype=float)
    p, se = _mean_se(hits)
    return EstimateRow(
        "separation_reach",
        p,
        se,
        {"d": params.d, "m": m, "eta": eta(z2 - z), "samples": config.samples, "horizon": config.horizon,
         "window": f"{config.box.n_min}:{config.box.n_max}:{config.box.x_radius}",
         "truncation_bound": horizon_tail_bound(params, config.horizon)},
    )


def _covers(box, d, p):
    return box.n_min <= -p and box.n_max >= p and box.x_radius >= p


def one_end_diagnostic(config, p_range):
    """Fraction of windowed forests where the tree of 0 crosses the cutset twice, per ``p``.

    Forests are sampled on ``config.box``. A ``p`` whose cylinder does not fit
    in the window is reported with value NaN and ``skipped`` set.
    """
    params = config.params
    d = params.d
    ps = sorted(int(p) for p in p_range)
    origin = Vertex.origin(d)
    valid = [p for p in ps if _covers(config.box, d, p)]

    def one(i):
        if not valid:
            return []
        f = wsf_rooted_at_infinity(params, region=config.box, horizon=config.horizon, streams=_forest_streams(config.seed, i))
        return [cutset_crossings(f, origin, p) >= 2 for p in valid]

    res = np.array(_map(one, config.samples), dtype=float).reshape(config.samples, len(valid))
    rows = []
    for p in ps:
        meta = {"d": d, "p": p, "samples": config.samples, "horizon": config.horizon,
                "window": f"{config.box.n_min}:{config.box.n_max}:{config.box.x_radius}",
                "truncation_bound": horizon_tail_bound(params, config.horizon)}
        if p in valid:
            v, se = _mean_se(res[:, valid.index(p)])
            rows.append(EstimateRow("two_crossings", v, se, dict(meta, skipped=False)))
        else:
            rows.append(EstimateRow("two_crossings", math.nan, 0.0, dict(meta, skipped=True)))
    return rows


def _flat(row):
    out = {"label": row.label, "value": row.value, "std_error": row.std_error}
    for k, v in row.meta.items():
        out[k] = v
    return out


def rows_to_csv(rows):
    """CSV text with columns label, value, std_error, then the metadata keys."""
    flat = [_flat(r) for r in rows]
    cols = []
    for f in flat:
        for k in f:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for f in flat:
        w.writerow(f)
    return buf.getvalue()


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def rows_to_json(rows):
    """JSON array of ``{label, value, std_error, meta}`` objects; non-finite numbers become null."""
    return json.dumps([_json_safe(r.as_dict()) for r in rows], indent=2) + "\n"


def write_rows(rows, path, fmt="csv"):
    text = rows_to_csv(rows) if fmt == "csv" else rows_to_json(rows)
    with open(path, "w") as fh:
        fh.write(text)
    return text
