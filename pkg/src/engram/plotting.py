"""Report figures. Every function writes one PNG and returns its path."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def training_curves(loss, accuracy, path, chance: float | None = None) -> Path:
    """Loss per step on the left axis, evaluation accuracy (step, acc) pairs on the right."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(np.arange(1, len(loss) + 1), loss, lw=0.8, color="C0")
        ax.set_xlabel("step")
        ax.set_ylabel("loss", color="C0")
        if accuracy:
            ax2 = ax.twinx()
            steps, acc = zip(*accuracy)
            ax2.plot(steps, acc, marker="o", ms=3, color="C1")
            if chance is not None:
                ax2.axhline(chance, ls=":", color="C1", lw=0.8)
            ax2.set_ylim(0, 1.02)
            ax2.set_ylabel("accuracy", color="C1")
            ax2.grid(False)
        return _save(fig, path)


def logitlens_plot(curves: dict, path) -> Path:
    """curves: label -> per-layer mean KL."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, kl in curves.items():
            ax.plot(np.arange(len(kl)), kl, marker="o", ms=3, label=label)
        ax.set_xlabel("layer")
        ax.set_ylabel("KL(final || layer) [nats]")
        if len(curves) > 1:
            ax.legend(frameon=False)
        return _save(fig, path)


def cka_heatmap(S, path, alignment=None, xlabel="model B layer", ylabel="model A layer") -> Path:
    S = np.asarray(S)
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(S, origin="lower", vmin=0, vmax=1, cmap="viridis", aspect="auto")
        fig.colorbar(im, ax=ax, label="CKA")
        if alignment is not None:
            a = np.asarray(alignment, dtype=float)
            ax.plot(np.arange(a.size), a, color="w", lw=1.2, marker=".", label="soft alignment")
            ax.plot([0, S.shape[1] - 1], [0, S.shape[1] - 1], color="w", ls="--", lw=0.6)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        return _save(fig, path)


def gate_heatmap(doc: dict, path, max_tokens: int = 64) -> Path:
    recs = doc["tokens"][:max_tokens]
    keys = list(recs[0]["alpha"]) if recs else []
    grid = np.array([[r["alpha"][k] for r in recs] for k in keys]) if recs else np.zeros((1, 1))
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.16 * len(recs) + 1.5), 0.4 * max(len(keys), 1) + 1.2))
        ax.imshow(grid, vmin=0, vmax=1, cmap="Reds", aspect="auto")
        ax.set_yticks(range(len(keys)), keys)
        ax.set_xticks(range(len(recs)), [str(r["token_text"]) for r in recs], rotation=90, fontsize=6)
        return _save(fig, path)


def overlap_plot(capacities, penalties, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(capacities, 100 * np.asarray(penalties), marker="o", ms=3)
        ax.set_xlabel("hot-tier capacity [rows]")
        ax.set_ylabel("throughput penalty [%]")
        return _save(fig, path)


def power_law_plot(points, fit, path) -> Path:
    pts = np.asarray(points, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.scatter(pts[:, 0], pts[:, 1], s=12, zorder=3)
        xs = np.geomspace(pts[:, 0].min(), pts[:, 0].max(), 50)
        ax.plot(xs, fit.predict(xs), color="C1", lw=1,
                label=f"slope {fit.slope:.4f}, R$^2$ {fit.r2:.3f}")
        ax.set_xscale("log")
        ax.set_xlabel("memory slots")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def allocation_plot(rhos, experts, slots, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(rhos, experts, marker="o", ms=3, color="C0")
        ax.set_xlabel(r"$\rho$ (share of inactive params to experts)")
        ax.set_ylabel("routed experts", color="C0")
        ax2 = ax.twinx()
        ax2.plot(rhos, slots, marker="s", ms=3, color="C2")
        ax2.set_ylabel("memory slots", color="C2")
        ax2.grid(False)
        return _save(fig, path)
