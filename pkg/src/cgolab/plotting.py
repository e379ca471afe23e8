"""Figures written next to the delimited outputs (Agg backend, PNG files)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.tri import Triangulation  # noqa: E402
import numpy as np  # noqa: E402


def _tri(domain):
    return Triangulation(domain.nodes[:, 0], domain.nodes[:, 1], domain.triangles)


def _save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def field_plot(domain, values, path, title="", cmap="RdBu_r", symmetric=True):
    v = np.asarray(values, float)
    fig, ax = plt.subplots(figsize=(6, 3.6))
    lim = float(np.abs(v).max()) or 1.0
    kw = {"vmin": -lim, "vmax": lim} if symmetric else {}
    tc = ax.tripcolor(_tri(domain), v, shading="gouraud", cmap=cmap, **kw)
    fig.colorbar(tc, ax=ax)
    ax.set_aspect("equal")
    ax.set_title(title)
    return _save(fig, path)


def weight_plot(domain, weight, path):
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    tri = _tri(domain)
    for ax, vals, name in zip(axes, (weight.phi(domain.z), weight.psi(domain.z)), ("phi", "psi")):
        tc = ax.tricontourf(tri, vals, 30)
        fig.colorbar(tc, ax=ax)
        for c in weight.critical_points:
            ax.plot(c.real, c.imag, "k*", ms=9)
        ax.set_aspect("equal")
        ax.set_title(name)
    return _save(fig, path)


def decay_plot(tables, path, title="residual decay"):
    """``tables`` maps a label to a DecayTable."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for label, tb in tables.items():
        a = np.abs(tb.value)
        ok = a > 0
        ax.loglog(tb.tau[ok], a[ok], "o-", label=f"{label} (slope {tb.slope:.2f})")
    ax.set_xlabel("tau")
    ax.legend(fontsize=8)
    ax.set_title(title)
    return _save(fig, path)


def scan_plot(domain, scan, path):
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.triplot(_tri(domain), lw=0.05, color="0.8")
    pts = np.array([e.point for e in scan.estimates]).reshape(-1, 2)
    vals = np.array([e.recovered for e in scan.estimates])
    if len(pts):
        lim = float(np.abs(vals).max()) or 1.0
        sc = ax.scatter(pts[:, 0], pts[:, 1], c=vals, cmap="RdBu_r", vmin=-lim, vmax=lim, s=80,
                        edgecolors="k")
        fig.colorbar(sc, ax=ax, label="recovered q1 - q2")
    ax.set_aspect("equal")
    ax.set_title("recovered difference at scan points")
    return _save(fig, path)


def reachable_plot(recon, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    m = recon.in_range
    ax.scatter(recon.y[m], recon.estimate[m], s=4, label="estimate")
    if recon.truth is not None:
        ax.scatter(recon.y[m], recon.truth[m], s=2, marker="x", label="truth")
    ax.set_xlabel("y")
    ax.set_ylabel("f1 - f2")
    ax.legend(fontsize=8)
    ax.set_title(f"reachable-set reconstruction ({recon.excluded} excluded)")
    return _save(fig, path)
