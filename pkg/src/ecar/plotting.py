"""Optional figures written next to the CSV/JSON outputs (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["plot_beta_curve", "plot_trace", "plot_spectral_correlation", "plot_replication_table"]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    _pyplot().close(fig)
    return path


def plot_beta_curve(omega, mean, lo, hi, path, reference: float | None = None) -> Path:
    """Posterior mean and 95% band of the frequency-varying effect."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.fill_between(omega, lo, hi, color="0.8", label="95% interval")
    ax.plot(omega, mean, color="k", lw=1.5, label="posterior mean")
    if reference is not None:
        ax.axhline(reference, color="tab:red", ls="--", lw=1)
    ax.set_xlabel("eigenvalue (frequency)")
    ax.set_ylabel("effect")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_trace(draws: np.ndarray, names, path, max_params: int = 6) -> Path:
    plt = _pyplot()
    k = min(len(names), max_params)
    fig, axes = plt.subplots(k, 1, figsize=(6, 1.4 * k), sharex=True, squeeze=False)
    for i in range(k):
        axes[i, 0].plot(draws[:, i], lw=0.4, color="k")
        axes[i, 0].set_ylabel(names[i], fontsize=8)
    axes[-1, 0].set_xlabel("retained iteration")
    return _save(fig, path)


def plot_spectral_correlation(curves: dict, path) -> Path:
    """``curves`` maps a label to (omega, correlation)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (omega, cor) in curves.items():
        order = np.argsort(omega)
        ax.plot(np.asarray(omega)[order], np.asarray(cor)[order], lw=1, label=label)
    ax.set_xlabel("eigenvalue (frequency)")
    ax.set_ylabel("correlation of X* and Z*")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_replication_table(methods, bias, coverage, path) -> Path:
    plt = _pyplot()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 3))
    pos = np.arange(len(methods))
    a1.bar(pos, bias, color="0.4")
    a1.axhline(0, color="k", lw=0.8)
    a1.set_ylabel("bias x 100")
    a2.bar(pos, coverage, color="0.4")
    a2.axhline(95, color="tab:red", ls="--", lw=1)
    a2.set_ylabel("coverage (%)")
    for a in (a1, a2):
        a.set_xticks(pos, methods, rotation=30, fontsize=8)
    return _save(fig, path)
