"""Bifurcation diagrams and solution profiles rendered with matplotlib.

Figures are written with fixed metadata and a fixed SVG hash salt so reruns on
the same data produce identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.linewidth": 0.8,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "plapcont",
    "svg.fonttype": "none",
}


def _save(fig, path):
    fmt = str(path).rsplit(".", 1)[-1].lower()
    metadata = {"Date": None} if fmt in ("svg", "pdf") else {}
    fig.savefig(path, metadata=metadata or None, bbox_inches="tight")
    plt.close(fig)


def bifurcation_diagram(
    path,
    lam,
    sup,
    fold=None,
    bound: float | None = None,
    certificate: float | None = None,
    asymptote: float | None = None,
    title: str | None = None,
    log_norm: bool = True,
):
    """``lambda`` horizontal, ``sup u`` vertical.

    ``fold`` is ``(Lambda_est, sup_at_fold)``.  ``bound``, ``certificate`` and
    ``asymptote`` are drawn as vertical reference lines when given.
    """
    lam = np.asarray(lam, dtype=float)
    sup = np.asarray(sup, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        ax.plot(lam, sup, color="k", label="branch")
        if fold is not None:
            ax.plot([fold[0]], [fold[1]], "o", color="tab:red", ms=5, label=f"fold {fold[0]:.4g}")
        styles = (
            (certificate, "tab:blue", "--", "no-solution threshold"),
            (bound, "tab:gray", ":", "explicit bound"),
            (asymptote, "tab:green", "-.", "asymptote"),
        )
        for value, color, ls, label in styles:
            if value is not None:
                ax.axvline(value, color=color, ls=ls, lw=1.0, label=f"{label} {value:.4g}")
        if log_norm and np.all(sup > 0):
            ax.set_yscale("log")
        ax.set_xlabel(r"$\lambda$")
        ax.set_ylabel(r"$\|u\|_\infty$")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, fontsize=7)
        _save(fig, path)
    return path


def profile_plot(path, x, curves: dict, title: str | None = None):
    """Overlay of nodal profiles, one line per ``label -> values``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for label, values in curves.items():
            ax.plot(x, values, label=label)
        ax.set_xlabel("x")
        ax.set_ylabel("u")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, fontsize=7)
        _save(fig, path)
    return path


def sweep_plot(path, params, values, targets=None, xlabel="parameter", ylabel="value", logx=True):
    """Fold or asymptote estimates against the sweep parameter."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(params, values, "o-", color="k", label="computed")
        if targets is not None:
            ax.plot(params, targets, "x--", color="tab:red", label="formula")
        if logx:
            ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False, fontsize=7)
        _save(fig, path)
    return path
