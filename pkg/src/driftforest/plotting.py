"""Figures for CLI reports. Everything renders off-screen to image files."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_estimates(rows, x_key, path, logx=False, logy=False, title=None, xlabel=None, ylabel="estimate", fit=None):
    """Error-bar plot of row values against ``row.meta[x_key]``.

    ``fit`` is an optional ``(xs, ys, label)`` curve drawn over the points.
    """
    fig, ax = plt.subplots(figsize=(5, 3.6))
    pts = [(r.meta[x_key], r.value, r.std_error) for r in rows if np.isfinite(r.value)]
    if pts:
        x, y, e = map(np.asarray, zip(*pts))
        ax.errorbar(x, y, yerr=e, fmt="o", capsize=3)
    if fit is not None:
        ax.plot(fit[0], fit[1], "-", label=fit[2])
        ax.legend()
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel or x_key)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_green_slice(table, path):
    """log10 of the restricted Green function on the plane through the source."""
    d = table.d
    vals = table.values
    # fix every transverse coordinate after the first at the source value
    idx = (slice(None), slice(None)) + tuple(int(c + table.box.x_radius) for c in table.source.x[1:])
    plane = vals[idx] if d > 1 else vals
    fig, ax = plt.subplots(figsize=(5, 4))
    with np.errstate(divide="ignore"):
        img = np.log10(plane)
    im = ax.imshow(
        img.T,
        origin="lower",
        aspect="auto",
        extent=[table.box.n_min - 0.5, table.box.n_max + 0.5, -table.box.x_radius - 0.5, table.box.x_radius + 0.5],
    )
    fig.colorbar(im, ax=ax, label="log10 G")
    ax.set_xlabel("n")
    ax.set_ylabel("x1")
    return _save(fig, path)


def plot_forest(forest, path):
    """Forest edges projected to the (n, x1) plane."""
    fig, ax = plt.subplots(figsize=(5, 5))
    coords = forest.coords
    e = forest.edges()
    if len(e):
        a, b = coords[e[:, 0]], coords[e[:, 1]]
        segs = np.stack([a[:, :2], b[:, :2]], axis=1).astype(float)
        from matplotlib.collections import LineCollection

        ax.add_collection(LineCollection(segs, linewidths=0.8))
    roots = coords[forest.parent_index < 0]
    ax.plot(roots[:, 0], roots[:, 1], "r.", ms=4, label="attached to root")
    ax.autoscale()
    ax.set_xlabel("n")
    ax.set_ylabel("x1")
    ax.legend(loc="upper left", fontsize=8)
    return _save(fig, path)
