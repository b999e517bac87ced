"""Matplotlib report figures rendered next to the delimited outputs."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def loss_curve(records: list[dict], out_path):
    """Training losses and learning rate over iterations."""
    out_path = Path(out_path)
    iters = [r["iteration"] for r in records]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(iters, [r["total"] for r in records], label="total", lw=1.2)
    ax1.plot(iters, [r["content"] for r in records], label="content", lw=0.9, alpha=0.8)
    ax1.plot(iters, [r["style"] for r in records], label="style", lw=0.9, alpha=0.8)
    ax1.set_ylabel("loss")
    ax1.legend(loc="upper right", fontsize=8)
    ax2.plot(iters, [r["lr"] for r in records], color="tab:red", lw=1.0)
    ax2.set_ylabel("learning rate")
    ax2.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def metrics_summary(records: list[dict], out_path):
    """Bar chart of per-pair SSIM and finite PSNR values."""
    out_path = Path(out_path)
    ok = [r for r in records if "error" not in r]
    names = [r["name"] for r in ok]
    ssims = [r["ssim"] for r in ok]
    psnrs = [r["psnr"] if isinstance(r["psnr"], (int, float)) else math.nan for r in ok]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(6, 0.5 * len(ok) + 4), 4))
    xs = range(len(ok))
    ax1.bar(xs, ssims, color="tab:blue")
    ax1.set_title("SSIM")
    ax2.bar(xs, psnrs, color="tab:green")
    ax2.set_title("PSNR (dB, finite only)")
    for ax in (ax1, ax2):
        ax.set_xticks(list(xs))
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
