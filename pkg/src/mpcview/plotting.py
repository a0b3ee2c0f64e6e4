"""Report figures (written to files with the Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_coverage(rows, path):
    """Coverage and PSNR against slant angle for both volume builders."""
    angles = [r["angle"] for r in rows]
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    for kind, color in (("mpc", "tab:blue"), ("sweep", "tab:green")):
        ax0.plot(angles, [r[f"coverage_{kind}"] for r in rows], "o-", color=color, label=f"{kind} (nearest)")
        ax0.plot(angles, [r[f"extent_coverage_{kind}"] for r in rows], "s--", color=color, alpha=0.6,
                 label=f"{kind} (extent)")
        ax1.plot(angles, [r[f"psnr_{kind}"] for r in rows], "o-", color=color, label=f"{kind} (weight > 0.5)")
        ax1.plot(angles, [r[f"surface_psnr_{kind}"] for r in rows], "s--", color=color, alpha=0.6,
                 label=f"{kind} (surface)")
    ax0.set_xlabel("slant angle [deg]")
    ax0.set_ylabel("coverage (tol 5 mm)")
    ax0.set_ylim(-0.02, 1.02)
    ax0.legend(fontsize=8)
    ax1.set_xlabel("slant angle [deg]")
    ax1.set_ylabel("PSNR [dB]")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_metric_series(rows, metric, path, mask="all"):
    """One line per camera of ``metric`` over frames."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    rows = [r for r in rows if "frame" in r]
    cams = sorted({r["camera"] for r in rows})
    for cam in cams:
        sel = [r for r in rows if r["camera"] == cam and r["metric"] == metric and r["mask"] == mask]
        vals = [r["value"] for r in sel]
        ax.plot([r["frame"] for r in sel], np.where(np.isfinite(vals), vals, np.nan), "o-", label=cam)
    ax.set_xlabel("frame")
    ax.set_ylabel(f"{metric} ({mask})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_timing(totals, path):
    fig, ax = plt.subplots(figsize=(5, 3))
    names = list(totals)
    ax.barh(names, [totals[n] for n in names])
    ax.set_xlabel("seconds")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
