"""Matplotlib figures written next to the CSV outputs.

PNG metadata is stripped of the software version so files are byte-stable.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def _display(img: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(img, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def loss_curve(values: Sequence[float], path: str | Path, title: str = "training loss",
               xlabel: str = "epoch") -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(1, len(values) + 1), values, lw=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def image_row(images: Sequence[np.ndarray], labels: Sequence[str], path: str | Path,
              captions: Sequence[str] | None = None) -> None:
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 2.0))
    for k, ax in enumerate(np.atleast_1d(axes)):
        ax.imshow(_display(images[k]), interpolation="nearest")
        ax.set_title(labels[k], fontsize=7)
        if captions is not None:
            ax.set_xlabel(captions[k], fontsize=7)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    _save(fig, path)


def distill_curves(rows: Sequence[dict], path: str | Path) -> None:
    """Loss per iteration on top, scored PSNR below, one colour per loss kind."""
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    kinds = list(dict.fromkeys(r["loss_kind"] for r in rows))
    for i, kind in enumerate(kinds):
        sel = [(k, r) for k, r in enumerate(rows) if r["loss_kind"] == kind]
        top.plot([k for k, _ in sel], [max(r["loss"], 1e-12) for _, r in sel], ".", ms=2, label=kind,
                 color=f"C{i}")
    top.set_yscale("log")
    top.set_ylabel("loss")
    top.legend(fontsize=7)
    scored = [(k, r) for k, r in enumerate(rows) if not math.isnan(r["psnr_novel_mean"])]
    bottom.plot([k for k, _ in scored], [r["psnr_novel_mean"] for _, r in scored], label="novel mean")
    bottom.plot([k for k, _ in scored], [min(r["psnr_ref"], 60.0) for _, r in scored], label="reference")
    bottom.set_ylabel("PSNR (dB)")
    bottom.set_xlabel("iteration (both stages)")
    bottom.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
