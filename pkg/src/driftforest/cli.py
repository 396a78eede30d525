"""Command line entry point: ``driftforest <command> [options]``.

Every command writes its table to ``--out`` (or stdout) as CSV or JSON. When
``--out`` is given, a figure is written next to it with the same stem and a
``.png`` suffix (``--no-figure`` turns this off).

Options may also come from a JSON file passed with ``--config``; explicit
flags win over the file, which wins over the built-in defaults. The file is a
single object whose keys are the long option names with dashes replaced by
underscores, for example::

    {"dim": 3, "lambda": 0.6931, "seed": 7, "samples": 2000,
     "horizon": 20000, "box_nmin": -4, "box_nmax": 8, "box_xradius": 4,
     "format": "json", "z": ["0,2,0,0", "0,4,0,0"]}

Unknown keys are an error. Vertices are written ``n,x1,...,xd``. Exit codes:
0 success, 2 domain error (bad input or configuration), 3 solver failure.
The thread count for sample fan-out is read from ``DRIFTFOREST_THREADS``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path as FsPath

import numpy as np

from . import experiments as ex
from . import green as gr
from . import plotting
from .errors import DomainError, SolverError
from .lattice import LatticeParams, Vertex
from .wilson import FiniteBox, format_forest, ust_finite, wsf_rooted_at_infinity

COMMANDS = [
    "green-exact",
    "green-mc",
    "bubble",
    "ust",
    "wsf",
    "intersections",
    "connectivity",
    "crossings",
    "spread",
    "separation",
    "one-end",
]

# defaults shared by all commands
COMMON = {
    "dim": 3,
    "lambda": math.log(2),
    "lazy": False,
    "seed": 0,
    "samples": 10_000,
    "horizon": 100_000,
    "box_nmin": -64,
    "box_nmax": 128,
    "box_xradius": 64,
    "out": None,
    "format": "csv",
    "no_figure": False,
}

# per-command overrides and extra options
SPECIFIC = {
    "green-exact": {"box_nmin": -6, "box_nmax": 30, "box_xradius": 10, "source": None},
    "green-mc": {"samples": 2000, "horizon": 20_000, "source": None, "target": None, "restrict": False},
    "bubble": {"mesh": [32, 64], "epsilon": [0.0]},
    "ust": {"dim": 1, "box_nmin": 0, "box_nmax": 7, "box_xradius": 4, "forest_text": None},
    "wsf": {"dim": 1, "box_nmin": -4, "box_nmax": 4, "box_xradius": 4, "forest_text": None},
    "intersections": {"samples": 1000, "start_a": None, "start_b": None, "horizons": None, "include_start": False},
    "connectivity": {"samples": 1000, "horizon": 20_000, "z": None, "eta": [2, 4, 8, 16]},
    "crossings": {"dim": 2, "samples": 1000, "horizon": 10**6, "p": [2, 3, 4, 5, 6, 7, 8], "k0": 1,
                  "base": 3, "cap": 2},
    "spread": {"samples": 1000, "horizon": 20_000, "vertex": None, "constant": None},
    "separation": {"samples": 200, "horizon": 20_000, "box_nmin": -2, "box_nmax": 2, "box_xradius": 2,
                   "z": None, "z2": None, "m": 1},
    "one-end": {"dim": 1, "samples": 1000, "horizon": 20_000, "box_nmin": -12, "box_nmax": 12,
                "box_xradius": 12, "p": [3, 6, 9, 12]},
}


def _vertex(text, d):
    try:
        coords = [int(c) for c in str(text).split(",")]
    except ValueError:
        raise DomainError(f"bad vertex {text!r}; expected n,x1,...,xd") from None
    if len(coords) != d + 1:
        raise DomainError(f"vertex {text!r} needs {d + 1} coordinates for d={d}")
    return Vertex(coords[0], tuple(coords[1:]))


def _add_common(p):
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--dim", type=int, help="transverse dimension d")
    p.add_argument("--lambda", dest="lambda", type=float, help="drift strength")
    p.add_argument("--lazy", action="store_true", default=None, help="use the half-lazy walk")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--horizon", type=int, help="step limit for each walk")
    p.add_argument("--box-nmin", type=int)
    p.add_argument("--box-nmax", type=int)
    p.add_argument("--box-xradius", type=int)
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--no-figure", action="store_true", default=None, help="skip the figure next to --out")


def build_parser():
    parser = argparse.ArgumentParser(prog="driftforest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _add_common(p)
        if name in ("green-exact", "green-mc"):
            p.add_argument("--source", help="source vertex (default origin)")
        if name == "green-mc":
            p.add_argument("--target", action="append", help="target vertex; repeatable")
            p.add_argument("--restrict", action="store_true", default=None, help="kill walks on leaving the box")
        if name == "bubble":
            p.add_argument("--mesh", type=int, action="append")
            p.add_argument("--epsilon", type=float, action="append")
        if name in ("ust", "wsf"):
            p.add_argument("--forest-text", help="also write the line-oriented forest here")
        if name == "intersections":
            p.add_argument("--start-a")
            p.add_argument("--start-b")
            p.add_argument("--horizons", type=int, action="append", help="report at several horizons")
            p.add_argument("--include-start", action="store_true", default=None)
        if name == "connectivity":
            p.add_argument("--z", action="append", help="target vertex; repeatable")
            p.add_argument("--eta", type=int, action="append", help="targets (0,(eta,0,..)); repeatable")
        if name in ("crossings", "one-end"):
            p.add_argument("--p", type=int, action="append", help="scale; repeatable")
        if name == "crossings":
            p.add_argument("--k0", type=int)
            p.add_argument("--base", type=int, help="region growth base (9 matches the theory)")
            p.add_argument("--cap", type=int, help="cylinder height factor (4 matches the theory)")
        if name == "spread":
            p.add_argument("--vertex", action="append", help="member of W; repeatable")
            p.add_argument("--constant", type=float)
        if name == "separation":
            p.add_argument("--z")
            p.add_argument("--z2")
            p.add_argument("--m", type=int)
    return parser


def resolve_options(command, ns):
    """Merge defaults, the JSON config file and explicit flags."""
    opts = dict(COMMON)
    opts.update(SPECIFIC[command])
    if ns.config:
        try:
            with open(ns.config) as fh:
                conf = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DomainError(f"cannot read config: {exc}") from None
        if not isinstance(conf, dict):
            raise DomainError("config must be a JSON object")
        unknown = set(conf) - set(opts)
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        opts.update(conf)
    for key, val in vars(ns).items():
        if key in ("command", "config") or val is None:
            continue
        opts[key] = val
    return opts


def _params(o):
    return LatticeParams(int(o["dim"]), float(o["lambda"]), bool(o["lazy"]))


def _box(o, wired=True):
    return FiniteBox(int(o["box_nmin"]), int(o["box_nmax"]), int(o["box_xradius"]), wired)


def _config(o, params):
    return ex.ExperimentConfig(
        params,
        seed=int(o["seed"]),
        samples=int(o["samples"]),
        horizon=int(o["horizon"]),
        box=_box(o),
        output_path=o["out"],
        format=o["format"],
        k0=int(o.get("k0", 1)),
        crossing_base=int(o.get("base", 3)),
        crossing_cap=int(o.get("cap", 2)),
    )


def _as_list(x):
    if x is None:
        return []
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _forest_rows(forest):
    rows = []
    for i in range(len(forest)):
        j = forest.parent_index[i]
        rows.append({
            "vertex": [int(c) for c in forest.coords[i]],
            "parent": "ROOT" if j < 0 else [int(c) for c in forest.coords[j]],
        })
    return rows


def _emit_forest(forest, o):
    if o["format"] == "json":
        text = json.dumps(_forest_rows(forest)) + "\n"
    else:
        lines = ["vertex,parent"]
        for r in _forest_rows(forest):
            par = r["parent"] if r["parent"] == "ROOT" else " ".join(map(str, r["parent"]))
            lines.append(" ".join(map(str, r["vertex"])) + "," + par)
        text = "\n".join(lines) + "\n"
    if o.get("forest_text"):
        with open(o["forest_text"], "w") as fh:
            fh.write(format_forest(forest))
    return text


def run(command, o):
    """Run one command; returns ``(text, figure_fn)`` where ``figure_fn(path)`` draws the report."""
    params = _params(o)
    d = params.d
    origin = Vertex.origin(d)
    if command == "green-exact":
        src = _vertex(o["source"], d) if o["source"] else origin
        table = gr.green_exact(params, _box(o), src)
        if o["format"] == "csv":
            text = table.to_csv()
        else:
            text = json.dumps({
                "source": list(src.as_tuple()),
                "solver_residual": table.solver_residual,
                "iterations": table.iterations,
                "values": [[*v.as_tuple(), float(g)] for v, g in zip(table.vertices(), table.values.ravel())],
            }) + "\n"
        return text, lambda path: plotting.plot_green_slice(table, path)
    if command == "green-mc":
        src = _vertex(o["source"], d) if o["source"] else origin
        targets = [_vertex(t, d) for t in _as_list(o["target"])] or [origin + Vertex(k, (0,) * d) for k in (1, 2, 4, 8)]
        box = _box(o) if o["restrict"] else None
        rows = []
        for t in targets:
            est = gr.green_mc(params, src, t, int(o["horizon"]), int(o["samples"]), int(o["seed"]), box=box)
            rows.append(ex.EstimateRow("green", est.value, est.std_error, {
                "target": str(t), "distance_n": t.n - src.n, "samples": est.samples,
                "horizon": int(o["horizon"]), "truncation_bound": est.truncation_bound}))
        return _rows_out(rows, o), lambda path: plotting.plot_estimates(rows, "distance_n", path, logy=True, ylabel="G")
    if command == "bubble":
        rows = []
        for m in _as_list(o["mesh"]):
            for eps in _as_list(o["epsilon"]):
                v = gr.bubble_integral(params, int(m), float(eps))
                rows.append(ex.EstimateRow("bubble", v, 0.0, {"d": d, "mesh": int(m), "epsilon": float(eps)}))
        key = "mesh" if len(_as_list(o["mesh"])) > 1 else "epsilon"
        return _rows_out(rows, o), lambda path: plotting.plot_estimates(rows, key, path, logx=True, ylabel="bubble integral")
    if command == "ust":
        forest = ust_finite(params, _box(o), seed=int(o["seed"]))
        return _emit_forest(forest, o), lambda path: plotting.plot_forest(forest, path)
    if command == "wsf":
        forest = wsf_rooted_at_infinity(params, _box(o), horizon=int(o["horizon"]), seed=int(o["seed"]))
        return _emit_forest(forest, o), lambda path: plotting.plot_forest(forest, path)

    cfg = _config(o, params)
    if command == "intersections":
        a = _vertex(o["start_a"], d) if o["start_a"] else origin
        b = _vertex(o["start_b"], d) if o["start_b"] else origin
        hs = _as_list(o["horizons"])
        if hs:
            rows = ex.intersection_curve(cfg, a, b, hs, bool(o["include_start"]))
        else:
            rows = [ex.intersections_experiment(cfg, a, b, bool(o["include_start"]))]
        return _rows_out(rows, o), lambda path: plotting.plot_estimates(rows, "horizon", path, logx=True, ylabel="P(paths meet)")
    if command == "connectivity":
        zs = [_vertex(z, d) for z in _as_list(o["z"])]
        if not zs:
            zs = [Vertex(0, (int(e),) + (0,) * (d - 1)) for e in _as_list(o["eta"])]
        rows = [ex.connectivity_experiment(cfg, z) for z in zs]
        return _rows_out(rows, o), lambda path: plotting.plot_estimates(
            rows, "eta", path, logx=True, logy=True, ylabel="P(0 and z connected)")
    if command == "crossings":
        ps = _as_list(o["p"])
        rows = ex.crossings_experiment(cfg, ps)
        a, r2 = ex.fit_inverse_p([r.meta["p"] for r in rows], [r.value for r in rows])
        for r in rows:
            r.meta.update(fit_a=a, fit_r2=r2)
        xs = np.linspace(min(ps), max(ps), 100)
        return _rows_out(rows, o), lambda path: plotting.plot_estimates(
            rows, "p", path, ylabel="P(M_p > 0)", fit=(xs, a / xs, f"{a:.3f}/p"))
    if command == "spread":
        w = [_vertex(v, d) for v in _as_list(o["vertex"])] or [origin]
        row = ex.spread_bound_experiment(cfg, w, o["constant"])
        return _rows_out([row], o), lambda path: plotting.plot_estimates([row], "spread", path, ylabel="P(one component)")
    if command == "separation":
        z = _vertex(o["z"], d) if o["z"] else origin
        z2 = _vertex(o["z2"], d) if o["z2"] else Vertex(0, (1,) + (0,) * (d - 1))
        rows = [ex.separation_experiment(cfg, z, z2, m) for m in range(int(o["m"]) + 1)]
        return _rows_out(rows, o), lambda path: plotting.plot_estimates(rows, "m", path, ylabel="P(reached)")
    if command == "one-end":
        rows = ex.one_end_diagnostic(cfg, _as_list(o["p"]))
        return _rows_out(rows, o), lambda path: plotting.plot_estimates(rows, "p", path, ylabel="P(two crossings)")
    raise DomainError(f"unknown command {command}")


def _rows_out(rows, o):
    return ex.rows_to_csv(rows) if o["format"] == "csv" else ex.rows_to_json(rows)


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        o = resolve_options(ns.command, ns)
        text, figure = run(ns.command, o)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    if o["out"]:
        out = FsPath(o["out"])
        out.write_text(text)
        if not o["no_figure"]:
            figure(str(out.with_suffix(".png")))
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
