"""PNG renderings that accompany the CSV outputs.

Uses the non-interactive Agg backend and strips the software tag from the
PNG metadata so repeated runs write identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_trajectory", "plot_sweep", "plot_spectrum", "plot_control"]

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def _segments(traj):
    """Per-subinterval ``(times, states)`` so jumps show as gaps, not slopes."""
    return [(t, x) for t, x in traj.segments]


def plot_trajectory(traj, path, title="", labels=None, max_components=6):
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    d = min(traj.dim, max_components)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i in range(d):
        c = colors[i % len(colors)]
        lab = labels[i] if labels else f"x{i}"
        for k, (t, x) in enumerate(_segments(traj)):
            ax.plot(t, x[:, i], color=c, lw=1.4, label=lab if k == 0 else None)
    for tk in traj.breakpoints[1:-1]:
        ax.axvline(tk, color="0.6", lw=0.8, ls=":")
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_control(times, values, path, title="continuous control"):
    fig, ax = plt.subplots(figsize=(6.4, 3.2))
    values = np.atleast_2d(np.asarray(values))
    for j in range(values.shape[1]):
        ax.plot(times, values[:, j], lw=1.2, label=f"u{j}")
    ax.set_xlabel("t")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_sweep(rows, path, title="terminal defect vs alpha"):
    a = np.array([r.alpha for r in rows])
    m = np.array([r.measured_error for r in rows])
    p = np.array([r.predicted_error for r in rows])
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ok = np.isfinite(m) & (m > 0)
    ax.loglog(a[ok], m[ok], "o-", label="measured")
    ok = np.isfinite(p) & (p > 0)
    ax.loglog(a[ok], p[ok], "x--", label="predicted")
    ax.invert_xaxis()
    ax.set_xlabel("alpha")
    ax.set_ylabel("|x(b) - h|")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)


def plot_spectrum(eigs: dict, path, title="Gramian eigenvalues"):
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    for name, lam in eigs.items():
        lam = np.sort(np.abs(np.asarray(lam)))[::-1]
        lam = np.where(lam > 0, lam, np.nan)
        ax.semilogy(np.arange(lam.size), lam, "o-", ms=3, label=name)
    ax.set_xlabel("index")
    ax.set_ylabel("|eigenvalue|")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)
