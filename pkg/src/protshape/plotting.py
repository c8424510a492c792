"""Matplotlib figures written next to the delimited outputs (Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def loss_history(path, history: dict, title: str = "training loss"):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    loss = np.asarray(history["loss"])
    ax.plot(np.arange(len(loss)), loss, lw=1, label="loss")
    if len(loss) >= 10:
        sm = np.convolve(loss, np.ones(10) / 10, mode="valid")
        ax.plot(np.arange(9, len(loss)), sm, lw=2, label="window-10 mean")
    ax.set_xlabel("epoch")
    ax.set_ylabel("negative ELBO")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def distance_heatmap(path, matrix, labels=None, title: str = "shape distance"):
    D = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(D, cmap="viridis")
    fig.colorbar(im, ax=ax, label="rad")
    if labels is not None and len(labels) <= 20:
        ax.set_xticks(range(len(labels)), labels, rotation=90, fontsize=6)
        ax.set_yticks(range(len(labels)), labels, fontsize=6)
    ax.set_title(title)
    return _save(fig, path)


def curve_path(path, curves, title: str = "geodesic"):
    """Each curve of a path drawn in 3D, colored from start to end."""
    fig = plt.figure(figsize=(5, 4.5))
    ax = fig.add_subplot(projection="3d")
    cmap = plt.get_cmap("coolwarm")
    n = len(curves)
    for k, pts in enumerate(curves):
        pts = np.asarray(pts)
        pts = pts - pts.mean(axis=0)
        ax.plot(*pts.T, color=cmap(k / max(n - 1, 1)), lw=1)
    ax.set_title(title)
    return _save(fig, path)


def vmf_samples(path, z, mu, kappa, density_w=None):
    """Histogram of w = mu . z, with an optional reference density."""
    w = np.asarray(z) @ np.asarray(mu)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(w, bins=60, range=(-1, 1), density=True, alpha=0.7)
    if density_w is not None:
        grid = np.linspace(-1, 1, 400)
        ax.plot(grid, density_w(grid), lw=1.5)
    ax.set_xlabel("mu . z")
    ax.set_title(f"vMF samples, kappa={kappa:g}")
    return _save(fig, path)


def warp_comparison(path, warps: dict, title: str = "warps"):
    fig, ax = plt.subplots(figsize=(4, 4))
    for name, g in warps.items():
        g = np.asarray(g)
        ax.plot(np.linspace(0, 1, len(g)), g, lw=1.5, label=name)
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls=":")
    ax.set_xlabel("t")
    ax.set_ylabel("gamma(t)")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def rmsd_bars(path, report: dict, title: str = "inpainting RMSD"):
    names = list(report)
    model = [report[k]["model"] for k in names]
    base = [report[k]["linear"] for k in names]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(x - 0.2, model, 0.4, label="latent optimization")
    ax.bar(x + 0.2, base, 0.4, label="linear fill")
    ax.set_xticks(x, names)
    ax.set_ylabel("masked-region RMSD")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)
