"""Matplotlib figures rendered to SVG next to the delimited outputs.

Figures are deterministic: the SVG hash salt is pinned to the config hash and
the date metadata is stripped, so reruns are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (6.0, 4.0)


def _save(fig, path: Path, stamp: str) -> Path:
    # the stamp (config hash + master seed) doubles as the SVG hash salt, so
    # figure ids are reproducible and every file records its provenance
    matplotlib.rcParams["svg.hashsalt"] = stamp
    fig.savefig(path, format="svg", metadata={"Date": None, "Title": stamp})
    plt.close(fig)
    return Path(path)


def plot_excess_vs_n(rows, n_grid, T_grid, path, stamp: str) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for T in T_grid:
        med = [np.median([r.excess for r in rows if r.T == T and r.n == n]) for n in n_grid]
        pts_n = [r.n for r in rows if r.T == T]
        pts_e = [max(r.excess, 1e-12) for r in rows if r.T == T]
        ax.plot(pts_n, pts_e, ".", alpha=0.35)
        ax.plot(n_grid, np.maximum(med, 1e-12), "o-", label=f"T={T} median")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("sequences n")
    ax.set_ylabel("excess risk")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path, stamp)


def plot_excess_vs_T(rows, n_grid, T_grid, path, stamp: str) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for n in n_grid:
        med = [np.median([r.excess for r in rows if r.T == T and r.n == n]) for T in T_grid]
        ax.plot(T_grid, np.maximum(med, 1e-12), "o-", label=f"n={n}")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("median excess risk")
    ax.legend(fontsize=7)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path, stamp)


def plot_corollary(rows, n_grid, eps_term: float, path, stamp: str) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for family in ("restricted", "realizable"):
        med = [
            np.median([r["lhs"] for r in rows if r["family"] == family and r["n"] == n])
            for n in n_grid
        ]
        ax.plot(n_grid, np.maximum(med, 1e-12), "o-", label=family)
    ax.axhline(eps_term, linestyle="--", color="gray", label="(T+1) eps-hat")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("sequences n")
    ax.set_ylabel("KL(data||fit) + E KL(Q||posterior)")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path, stamp)


def plot_slack_histograms(slack_samples: dict, path, stamp: str) -> Path:
    names = [k for k, v in slack_samples.items() if v]
    fig, axes = plt.subplots(
        max(1, (len(names) + 2) // 3), 3, figsize=(9, 2.4 * max(1, (len(names) + 2) // 3))
    )
    axes = np.atleast_1d(axes).ravel()
    for ax in axes[len(names) :]:
        ax.set_visible(False)
    for ax, name in zip(axes, names):
        vals = np.asarray(slack_samples[name], dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            ax.hist(vals, bins=20, color="#4878a8")
        ax.set_title(name, fontsize=8)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    return _save(fig, path, stamp)


def plot_fit_trace(trace, path, stamp: str) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(np.arange(len(trace)), trace, "-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("empirical loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path, stamp)
