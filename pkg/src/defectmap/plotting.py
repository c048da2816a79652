"""Report figures. Everything renders off-screen to PNG files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from mpl_toolkits.mplot3d.art3d import Poly3DCollection  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 120,
}
# no timestamps or version strings in the PNG header
_META = {"Software": None}


def _new(figsize=(5.0, 3.2), **kw):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize, **kw)
    return fig, ax


def _save(fig, path):
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_spectrum(eigenvalues, path, reference=None):
    fig, ax = _new()
    idx = np.arange(len(eigenvalues))
    ax.plot(idx, eigenvalues, ".", ms=3, label="computed")
    if reference is not None:
        ax.plot(idx, reference, "-", lw=0.8, color="0.4", label="reference")
        ax.legend(frameon=False)
    ax.set_xlabel("index i")
    ax.set_ylabel(r"$\lambda_i$")
    return _save(fig, path)


def plot_hks_curves(field, vertices, path):
    fig, ax = _new()
    t = field.grid.values
    for x in vertices:
        ax.loglog(t, field.values[int(x)], lw=0.9, label=f"vertex {int(x)}")
    ax.loglog(t, field.values.mean(axis=0), "k--", lw=0.9, label="vertex mean")
    ax.set_xlabel("t")
    ax.set_ylabel(r"$f_t(x)$")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_deviation_histogram(deviation, path, threshold=None):
    fig, ax = _new()
    ax.hist(deviation, bins=60, color="0.35")
    if threshold is not None:
        ax.axvline(threshold, color="C3", lw=1.0, label=f"threshold {threshold:.4g}")
        ax.legend(frameon=False)
    ax.set_yscale("log")
    ax.set_xlabel("deviation D(x)")
    ax.set_ylabel("vertices")
    return _save(fig, path)


def plot_phase1(maxima, threshold, path):
    fig, ax = _new()
    ordered = np.sort(np.asarray(maxima))[::-1]
    ax.plot(np.arange(1, len(ordered) + 1), ordered, "o", ms=3, color="0.3")
    ax.axhline(threshold, color="C3", lw=1.0)
    ax.set_xlabel("rank")
    ax.set_ylabel(r"Phase-I $D_{max}$")
    return _save(fig, path)


def plot_c_diagonal(cmap, path):
    fig, ax = _new()
    j = np.arange(cmap.p)
    ax.plot(j, cmap.unconstrained, ".", ms=3, color="0.6", label="q = 0")
    ax.plot(j, cmap.diag, ".", ms=3, color="C0", label=f"q = {cmap.q:g}")
    ax.axhline(1.0, lw=0.5, color="0.7")
    ax.axhline(-1.0, lw=0.5, color="0.7")
    ax.set_xlabel("j")
    ax.set_ylabel(r"$c_{jj}$")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_bench(sizes, means, stds, path):
    fig, ax = _new()
    ax.errorbar(sizes, means, yerr=stds, fmt="o-", ms=3, lw=0.9, capsize=2)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("vertices per mesh")
    ax.set_ylabel("seconds")
    return _save(fig, path)


def plot_mesh(mesh, scalar, path, flags=None, elev=25.0, azim=-60.0):
    """Faces coloured by the mean vertex scalar; flagged faces drawn yellow."""
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(5.0, 4.0))
        ax = fig.add_subplot(111, projection="3d")
    tris = mesh.vertices[mesh.faces]
    values = np.asarray(scalar, dtype=float)[mesh.faces].mean(axis=1)
    span = np.ptp(values)
    norm = (values - values.min()) / span if span > 0 else np.zeros_like(values)
    colors = plt.get_cmap("viridis")(norm)
    if flags is not None:
        hit = np.asarray(flags, dtype=bool)[mesh.faces].any(axis=1)
        colors[hit] = (1.0, 1.0, 0.0, 1.0)
    ax.add_collection3d(Poly3DCollection(tris, facecolors=colors, edgecolors="none"))
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo).max()
    ax.set_xlim(mid[0] - half, mid[0] + half)
    ax.set_ylim(mid[1] - half, mid[1] + half)
    ax.set_zlim(mid[2] - half, mid[2] + half)
    ax.view_init(elev=elev, azim=azim)
    ax.set_axis_off()
    return _save(fig, path)
