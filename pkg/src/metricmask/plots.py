"""Figure rendering for the report paths (headless matplotlib)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def render_curves(records, path) -> None:
    """Learning curves: losses and validation scores per epoch."""
    epochs = [r.epoch for r in records]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(epochs, [r.d_loss for r in records], label="critic loss", color="tab:red")
    ax1.plot(epochs, [r.g_loss for r in records], label="masker loss", color="tab:blue")
    ax1.set_ylabel("loss")
    ax1.legend(loc="best", fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [r.val_score_enhanced for r in records],
             label="validation score (enhanced)", color="tab:green")
    ax2.plot(epochs, [r.val_score_noisy for r in records],
             label="validation score (input)", color="tab:gray", linestyle="--")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("normalized score")
    ax2.legend(loc="best", fontsize=8)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_scores(rows, path, title="per-utterance scores") -> None:
    """Bar chart of per-utterance raw scores with the mean marked."""
    body = [r for r in rows if r["id"] != "mean"]
    mean_rows = [r for r in rows if r["id"] == "mean"]
    fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(body)), 4))
    ax.bar(range(len(body)), [r["raw"] for r in body], color="tab:blue")
    if mean_rows:
        ax.axhline(mean_rows[0]["raw"], color="tab:red", linestyle="--",
                   label=f"mean {mean_rows[0]['raw']:.3f}")
        ax.legend(loc="best", fontsize=8)
    ax.set_xticks(range(len(body)))
    ax.set_xticklabels([r["id"] for r in body], rotation=90, fontsize=6)
    ax.set_ylabel("raw score")
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
