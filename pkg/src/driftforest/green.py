"""Green's function of the drifted lattice.

Four routes, each usable as a check on the others:

* :func:`green_exact` solves the absorbing linear system on a box;
* :func:`green_dense` does the same with a dense direct solve (small boxes);
* :func:`green_infinite` integrates the continuous-time kernel, whose
  coordinates are independent Poissonised walks, over the whole lattice;
* :func:`green_mc` and :func:`green_via_hitting` simulate.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.special import ive

from . import _kernels
from .errors import DomainError, SolverError
from .lattice import Vertex, moments, step_deltas, step_probabilities
from .rng import stream
from .walk import drift_tail_bound, return_never_probability, step_cdf

__all__ = [
    "GreenTable",
    "GreenEstimate",
    "EnvelopeConstants",
    "green_exact",
    "green_dense",
    "green_infinite",
    "green_mc",
    "green_via_hitting",
    "envelope_upper",
    "envelope_lower",
    "envelope_branch",
    "fit_envelope_constants",
    "bubble_integral",
    "loglog_slope",
]


@dataclass
class GreenTable:
    """Restricted Green's function ``G_box(source, .)`` on the box interior."""

    box: object
    source: Vertex
    values: np.ndarray
    solver_residual: float
    iterations: int = 0

    @property
    def d(self):
        return self.values.ndim - 1

    def _index(self, y):
        b = self.box
        if not b.contains(y):
            return None
        return (y.n - b.n_min,) + tuple(c + b.x_radius for c in y.x)

    def __getitem__(self, y):
        """``G_box(source, y)``; zero for ``y`` outside the box."""
        idx = self._index(y)
        return 0.0 if idx is None else float(self.values[idx])

    def vertices(self):
        return self.box.vertices(self.d)

    def sum_of_squares(self):
        return float(np.sum(self.values**2))

    def to_csv(self):
        """CSV ``n,x1..xd,value`` with rows in lexicographic vertex order."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n"] + [f"x{i + 1}" for i in range(self.d)] + ["value"])
        for v, g in zip(self.vertices(), self.values.ravel()):
            w.writerow(list(v.as_tuple()) + [repr(float(g))])
        return buf.getvalue()


@dataclass
class GreenEstimate:
    value: float
    std_error: float
    samples: int
    truncation_bound: float = 0.0


@dataclass
class EnvelopeConstants:
    c1: float
    c2: float
    c3: float
    c4: float
    coverage: float = 1.0
    failures: list = field(default_factory=list)
    gaussian_slope: float = float("nan")
    exponential_slope: float = float("nan")
    exponential_r2: float = float("nan")


def _box_system(params, box):
    """Conductance matrix and vertex conductances of the box interior."""
    d = params.d
    nn = box.n_max - box.n_min + 1
    w = 2 * box.x_radius + 1
    shape = (nn,) + (w,) * d
    size = int(np.prod(shape))
    idx = np.arange(size).reshape(shape)
    levels = np.arange(box.n_min, box.n_max + 1)
    level_shape = (nn,) + (1,) * d
    mu = np.broadcast_to(
        (np.exp(params.lam * levels) * params.normalizer).reshape(level_shape), shape
    ).ravel()
    rows, cols, vals = [], [], []
    for axis in range(d + 1):
        lo = [slice(None)] * (d + 1)
        hi = [slice(None)] * (d + 1)
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a = idx[tuple(lo)].ravel()
        b = idx[tuple(hi)].ravel()
        # the conductance of an edge is set by its upper level
        lv = levels[1:] if axis == 0 else levels
        c = np.broadcast_to(np.exp(params.lam * lv).reshape((len(lv),) + (1,) * d), idx[tuple(lo)].shape).ravel()
        rows += [a, b]
        cols += [b, a]
        vals += [c, c]
    cond = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )
    return cond, mu, shape


def _source_index(box, source, shape):
    if not box.contains(source):
        raise DomainError(f"source {source} is not interior to the box")
    return int(np.ravel_multi_index((source.n - box.n_min,) + tuple(c + box.x_radius for c in source.x), shape))


def green_exact(params, box, source, rtol=1e-12, maxiter=20000):
    """Expected visits to each box vertex before the walk from ``source`` leaves the box.

    The walk is killed on its first step outside the box. The row
    ``g = G(source, .)`` solves the substochastic system
    ``(I - P_box)^T g = e_source``; its diagonal is 1, so Jacobi
    preconditioning is the identity. BiCGSTAB stops at relative residual
    ``rtol``; the default sits two orders below 1e-10 so that small entries
    keep about eight significant digits. The system is solved in ``g`` itself rather than in a
    symmetrised scaling: the symmetric form divides values by
    ``exp(lam * n / 2)``, and far upstream values then drown in the
    tolerance. The lazy walk spends two steps per move on average, which
    doubles every value.
    """
    cond, mu, shape = _box_system(params, box)
    s = _source_index(box, source, shape)
    system = (sp.identity(len(mu), format="csr") - (sp.diags(1.0 / mu) @ cond).T).tocsr()
    rhs = np.zeros(len(mu))
    rhs[s] = 1.0
    count = [0]

    def tick(_):
        count[0] += 1

    sol, info = spla.bicgstab(system, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, callback=tick)
    residual = float(np.linalg.norm(system @ sol - rhs))
    if info != 0 or not residual <= 10 * rtol:
        raise SolverError(f"BiCGSTAB stopped at residual {residual:.3e}", residual)
    values = 2.0 * sol if params.lazy else sol
    return GreenTable(box, source, values.reshape(shape), residual, count[0])


def green_dense(params, box, source):
    """Dense direct solve of ``(I - P_box) G = I``; for boxes up to 500 vertices."""
    cond, mu, shape = _box_system(params, box)
    if len(mu) > 500:
        raise DomainError("dense oracle is limited to 500 unknowns")
    s = _source_index(box, source, shape)
    trans = cond.toarray() / mu[:, None]
    if params.lazy:
        trans = 0.5 * (np.eye(len(mu)) + trans)
    green = np.linalg.inv(np.eye(len(mu)) - trans)
    return GreenTable(box, source, green[s].reshape(shape), 0.0)


def green_infinite(params, z, epsrel=1e-10):
    """``G(0, z)`` on the whole lattice from the continuous-time kernel.

    The unit-rate continuous-time walk moves its coordinates independently:
    the drifted one up at rate ``p e^lam`` and down at rate ``p``, each
    transverse one by +-1 at rate ``p`` each, with ``p = 1/(2d + 1 + e^lam)``.
    Their transition probabilities are modified Bessel functions, and the
    Green's function is the time integral of their product.
    """
    d = params.d
    p = 1.0 / params.normalizer
    el = math.exp(params.lam)
    rate0 = 2 * p * math.exp(params.lam / 2)
    n = abs(z.n)
    xs = [abs(c) for c in z.x]

    # the drifted walk's kernel is e^{lam n / 2} I_n times exp(-(1 + e^lam) p t);
    # each transverse kernel is I_x(2pt) e^{-2pt}
    def full(t):
        v = ive(n, rate0 * t) * math.exp(rate0 * t - (1 + el) * p * t)
        for xi in xs:
            v *= ive(xi, 2 * p * t)
        return v

    total, _ = quad(full, 0, math.inf, limit=1000, epsabs=0.0, epsrel=epsrel)
    total *= math.exp(params.lam * z.n / 2)
    return 2.0 * total if params.lazy else total


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def _box_bounds(params, box):
    big = np.iinfo(np.int64).max // 4
    if box is None:
        return np.full(params.d + 1, -big, dtype=np.int64), np.full(params.d + 1, big, dtype=np.int64)
    return box.lower(params.d), box.upper(params.d)


def green_mc(params, source, target, horizon, samples, seed, box=None):
    """Mean number of visits to ``target`` within ``horizon`` steps.

    With ``box`` the walk is killed on leaving it (restricted Green's
    function) and ``horizon`` may be ``None`` for no step limit. Sample ``i``
    draws from ``stream(seed, i)``. The truncation bound caps the expected
    number of visits the horizon cut off: from level ``n_H`` the walk revisits
    the target level with chance at most ``(q/p)^(n_H - target.n)``, and each
    return brings at most ``1 / (p - q)`` visits to that level on average.
    """
    if samples < 1:
        raise DomainError("samples must be positive")
    dist = sum(abs(c) for c in (target - source).as_tuple())
    if horizon is not None and dist > horizon:
        return GreenEstimate(0.0, 0.0, samples, 0.0)
    cdf = step_cdf(params)
    deltas = step_deltas(params.d, params.lazy)
    lo, hi = _box_bounds(params, box)
    start, tgt = source.as_array(), target.as_array()
    h = -1 if horizon is None else int(horizon)
    visits = np.empty(samples)
    tail = np.zeros(samples)
    escape = return_never_probability(params)
    for i in range(samples):
        v, _, exited, level = _kernels.restricted_visits(stream(seed, i), cdf, deltas, start, lo, hi, tgt, h)
        visits[i] = v
        if not exited:
            tail[i] = drift_tail_bound(params, max(0, level - target.n)) / escape
    value, se = _mean_se(visits)
    return GreenEstimate(value, se, samples, float(tail.mean()))


def green_via_hitting(params, source, target, horizon, samples, seed):
    """``G(source, source) * P(walk from source ever hits target)`` by two simulations.

    Both factors use ``samples`` walks of ``horizon`` steps; pass one reads
    streams ``(seed, 0, i)`` and pass two ``(seed, 1, i)``. The standard error
    combines the two by the delta method.
    """
    if samples < 1:
        raise DomainError("samples must be positive")
    cdf = step_cdf(params)
    deltas = step_deltas(params.d, params.lazy)
    lo, hi = _box_bounds(params, None)
    start = source.as_array()
    diag = np.empty(samples)
    hits = np.empty(samples)
    for i in range(samples):
        diag[i] = _kernels.restricted_visits(stream(seed, 0, i), cdf, deltas, start, lo, hi, start, int(horizon))[0]
    if target == source:
        hits[:] = 1.0
    else:
        tgt = target.as_array()
        for i in range(samples):
            hits[i] = _kernels.first_visit(stream(seed, 1, i), cdf, deltas, start, tgt, int(horizon)) >= 0
    g, g_se = _mean_se(diag)
    ph, ph_se = _mean_se(hits)
    se = math.hypot(ph * g_se, g * ph_se)
    escape = return_never_probability(params)
    # a missed hit after the horizon, or missed returns to the source
    bound = drift_tail_bound(params, max(0, int(moments(params).a * horizon) - abs(target.n - source.n))) / escape
    return GreenEstimate(g * ph, se, samples, bound)


def envelope_branch(z):
    """``"gaussian"`` when ``||x|| <= n``, else ``"exponential"``."""
    xnorm = math.sqrt(sum(c * c for c in z.x))
    return "gaussian" if xnorm <= z.n else "exponential"


def _envelope(params, z, c, k):
    if z.n == 0 and not any(z.x):
        raise DomainError("the envelope is not defined at the origin")
    x2 = sum(c_ * c_ for c_ in z.x)
    znorm = math.sqrt(z.n * z.n + x2)
    if envelope_branch(z) == "gaussian":
        return c * math.exp(-k * x2 / z.n) * znorm ** (-params.d / 2)
    return c * math.exp(-k * znorm)


def envelope_upper(params, z, consts):
    return _envelope(params, z, consts.c1, consts.c2)


def envelope_lower(params, z, consts):
    return _envelope(params, z, consts.c3, consts.c4)


def _features(params, z):
    """``(log-envelope offset, decay feature, branch)`` for one grid point."""
    x2 = sum(c * c for c in z.x)
    znorm = math.sqrt(z.n * z.n + x2)
    if envelope_branch(z) == "gaussian":
        return -params.d / 2 * math.log(znorm), x2 / z.n, "gaussian"
    return 0.0, znorm, "exponential"


def fit_envelope_constants(params, samples):
    """Fit the two-regime envelope to Green's function values on a grid.

    ``samples`` maps vertices to positive values. In each regime the decay
    rate is the least-squares slope of the log-value (less the power-law
    factor) against the regime's feature. The upper envelope takes the slower
    rate and the lower one the faster. The prefactors ``c1`` and ``c3`` are the
    extreme residuals, so every grid point lies between the envelopes;
    ``coverage`` and ``failures`` report this.
    """
    pts = [(z, float(g)) for z, g in dict(samples).items()]
    if any(z.n == 0 and not any(z.x) for z, _ in pts):
        raise DomainError("the grid must not contain the origin")
    if any(g <= 0 for _, g in pts):
        raise DomainError("Green's function values must be positive")
    rows = {"gaussian": [], "exponential": []}
    for z, g in pts:
        off, feat, br = _features(params, z)
        rows[br].append((feat, math.log(g) - off))
    slopes, r2 = {}, float("nan")
    for br, data in rows.items():
        feats = np.array([f for f, _ in data])
        if len(data) < 2 or np.ptp(feats) == 0:
            raise DomainError(f"grid needs two distinct points in the {br} regime")
        y = np.array([v for _, v in data])
        slope, icept = np.polyfit(feats, y, 1)
        slopes[br] = -slope
        if br == "exponential":
            resid = y - (slope * feats + icept)
            r2 = 1.0 - resid.var() / y.var() if y.var() > 0 else 1.0
    if min(slopes.values()) <= 0:
        raise DomainError("values do not decay in one of the regimes")
    c2 = min(slopes.values())
    c4 = max(slopes.values())
    up = max(y + c2 * f for data in rows.values() for f, y in data)
    lo = min(y + c4 * f for data in rows.values() for f, y in data)
    consts = EnvelopeConstants(
        math.exp(up), c2, math.exp(lo), c4,
        gaussian_slope=slopes["gaussian"],
        exponential_slope=slopes["exponential"],
        exponential_r2=r2,
    )
    tol = 1e-12
    fails = [
        z for z, g in pts
        if not envelope_lower(params, z, consts) * (1 - tol) <= g <= envelope_upper(params, z, consts) * (1 + tol)
    ]
    consts.failures = fails
    consts.coverage = 1.0 - len(fails) / len(pts)
    return consts


def loglog_slope(xs, ys):
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def _drift_integral(params, delta, window):
    """Integral over ``window <= |h0| <= pi`` of ``|1 - phi(h0, hx)|^-2``.

    ``delta = (2/N) sum_j (1 - cos h_j)`` carries the transverse frequencies.
    As a function of ``c = cos h0`` the squared modulus is ``k (c1 - c)(c2 - c)``
    with ``1 <= c1 < c2``, so the integral splits into two terms of the form
    ``int dh0 / (c_i - cos h0)``, each with an arctangent antiderivative.
    ``c1 - 1`` is formed without cancellation because the integrand is
    singular as it vanishes.
    """
    norm = params.normalizer
    el = math.exp(params.lam)
    alpha = (el + 1) / norm
    beta = (el - 1) / norm
    k = alpha**2 - beta**2
    s = np.sqrt(2 * alpha * delta + delta**2 + beta**2)
    c1m1 = delta * (alpha - beta * (2 * alpha + delta) / (beta + s)) / k
    gap = 2 * beta * s / k
    c2m1 = c1m1 + gap

    def piece(cm1):
        root = np.sqrt(cm1 * (cm1 + 2))
        cut = 2 * np.arctan(np.sqrt((cm1 + 2) / cm1) * np.tan(window / 2))
        return 2 * (math.pi - cut) / root

    return (piece(c1m1) - piece(c2m1)) / (k * gap)


def _bubble_transverse(params, mesh, eps, chunk=1 << 20):
    d = params.d
    h = -math.pi + (np.arange(mesh) + 0.5) * (2 * math.pi / mesh)
    sin2 = np.sin(h / 2) ** 2
    total = 0.0
    # walk the transverse mesh in slabs over the first transverse axis
    rest = d - 1
    rest_sin = np.zeros(1)
    rest_h2 = np.zeros(1)
    for _ in range(rest):
        rest_sin = (rest_sin[:, None] + sin2[None, :]).ravel()
        rest_h2 = (rest_h2[:, None] + (h**2)[None, :]).ravel()
    for i in range(mesh):
        delta = 4.0 / params.normalizer * (sin2[i] + rest_sin)
        r2 = h[i] ** 2 + rest_h2
        window = np.where(r2 < eps * eps, np.sqrt(np.maximum(eps * eps - r2, 0.0)), 0.0)
        total += _drift_integral(params, delta, window).sum()
    return total * (2 * math.pi / mesh) ** d / (2 * math.pi) ** (d + 1)


def _bubble_shells(params, mesh, eps):
    """Transverse midpoint rule on dyadic shells around ``hx = 0``.

    The shell between the cubes of half-widths ``a`` and ``a / 2`` gets
    ``mesh`` cells per axis, so the resolution follows ``|hx|``. Shells stop
    once the cube sits well inside the cutoff ball, where the integrand is
    bounded, and the last cube takes a plain midpoint rule.
    """
    d = params.d
    a = math.pi
    total = 0.0
    while True:
        width = 2 * a / mesh
        h = -a + (np.arange(mesh) + 0.5) * width
        grids = np.meshgrid(*([h] * d), indexing="ij")
        hx = np.stack([g.ravel() for g in grids])
        last = a < eps / 8
        if not last:
            hx = hx[:, np.abs(hx).max(axis=0) > a / 2]
        delta = 4.0 / params.normalizer * (np.sin(hx / 2) ** 2).sum(axis=0)
        r2 = (hx**2).sum(axis=0)
        window = np.sqrt(np.maximum(eps * eps - r2, 0.0))
        total += _drift_integral(params, delta, window).sum() * width**d
        if last:
            break
        a /= 2
    return total / (2 * math.pi) ** (d + 1)


def _bubble_midpoint(params, mesh, eps):
    d = params.d
    el = math.exp(params.lam)
    norm = params.normalizer
    h = -math.pi + (np.arange(mesh) + 0.5) * (2 * math.pi / mesh)
    grids = np.meshgrid(*([h] * d), indexing="ij", sparse=True)
    cos_sum = sum(np.cos(g) for g in grids)
    r2x = sum(g**2 for g in grids)
    total = 0.0
    for h0 in h:
        phi = (el * np.exp(1j * h0) + np.exp(-1j * h0)) / norm + 2.0 / norm * cos_sum
        f = 1.0 / np.abs(1.0 - phi) ** 2
        if eps > 0:
            f = np.where(h0 * h0 + r2x < eps * eps, 0.0, f)
        total += float(np.sum(f))
    return total * (2 * math.pi / mesh) ** (d + 1) / (2 * math.pi) ** (d + 1)


def bubble_integral(params, mesh, epsilon_cutoff=0.0, method="exact-drift"):
    """``(2 pi)^-(d+1)`` times the integral of ``|1 - phi(h)|^-2`` over the torus.

    The ball ``|h| < epsilon_cutoff`` is left out. By Parseval this equals the
    sum of ``G(0, z)^2`` over the lattice when it is finite.

    ``method="exact-drift"`` (default) integrates the drifted frequency in
    closed form and applies the midpoint rule on the transverse torus. The
    transverse integrand then blows up like ``|hx|^-2`` at the origin, which
    leaves a first-order error in the mesh width. Without a cutoff that error
    is removed by one Richardson step, ``2 Q(mesh) - Q(mesh / 2)``, in
    dimensions ``d >= 3`` where the integral converges.
    ``method="midpoint"`` is the plain midpoint rule in all ``d + 1``
    coordinates. Meshes are even so that no node sits on the singularity.
    With a positive cutoff the exact-drift rule refines the transverse mesh
    on dyadic shells toward the origin, ``mesh`` cells per axis per shell,
    so that small cutoff balls are resolved.
    """
    if mesh < 8 or mesh % 2:
        raise DomainError("mesh must be an even integer >= 8")
    if epsilon_cutoff < 0:
        raise DomainError("cutoff must be nonnegative")
    if method == "midpoint":
        return _bubble_midpoint(params, mesh, epsilon_cutoff)
    if method != "exact-drift":
        raise DomainError(f"unknown method {method!r}")
    scale = 2.0 if params.lazy else 1.0
    if epsilon_cutoff > 0:
        if mesh % 4:
            raise DomainError("mesh must be a multiple of 4 with a cutoff")
        return scale**2 * _bubble_shells(params, mesh, epsilon_cutoff)
    fine = _bubble_transverse(params, mesh, epsilon_cutoff)
    if mesh % 4 or params.d < 3:
        return scale**2 * fine
    coarse = _bubble_transverse(params, mesh // 2, epsilon_cutoff)
    return scale**2 * (2 * fine - coarse)
