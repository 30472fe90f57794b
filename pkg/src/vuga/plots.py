"""Figures written next to the TSV/JSON outputs of the CLI."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}
FORMAT = "png"


def savefig(fig, path):
    path = Path(path)
    if not path.suffix:
        path = path.with_suffix("." + FORMAT)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def read_train_log(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return ([int(r["step"]) for r in rows], [float(r["loss"]) for r in rows], [float(r["lr"]) for r in rows])


def loss_curve(train_log, out_path):
    steps, losses, lrs = read_train_log(train_log)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(steps, losses, color="C0", lw=1)
        ax.set_xlabel("step")
        ax.set_ylabel("MSE loss")
        if losses and min(losses) > 0:
            ax.set_yscale("log")
        ax2 = ax.twinx()
        ax2.plot(steps, lrs, color="C1", lw=1, ls="--")
        ax2.set_ylabel("learning rate", color="C1")
        ax2.spines["right"].set_visible(True)
        return savefig(fig, out_path)


def eval_scatter(result, out_path, title=None):
    """Predictions vs MOS with the fitted logistic mapping overlaid."""
    from .metrics import logistic4

    pred = np.array([p for _, p, _ in result.predictions])
    mos = np.array([m for _, _, m in result.predictions])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.scatter(pred, mos, s=10, alpha=0.7, color="C0", edgecolors="none")
        xs = np.linspace(pred.min(), pred.max(), 200)
        ax.plot(xs, logistic4(xs, *result.logistic_params), color="C3", lw=1.2, label="logistic fit")
        ax.set_xlabel("predicted score")
        ax.set_ylabel("MOS")
        ax.set_title(title or f"SRCC {result.srcc:.3f}  PLCC {result.plcc:.3f}")
        ax.legend(loc="best", frameon=False)
        return savefig(fig, out_path)


def sweep_chart(rows, kind, out_path):
    """``rows`` are dicts with ``label``, ``srcc`` and ``plcc``."""
    labels = [str(r["label"]) for r in rows]
    srcc = [r["srcc"] for r in rows]
    plcc = [r["plcc"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        if kind == "resolution":
            ax.plot(labels, srcc, marker="s", ms=4, label="SRCC")
            ax.plot(labels, plcc, marker="o", ms=4, label="PLCC")
            ax.set_xlabel("input resolution")
        else:
            x = np.arange(len(labels))
            ax.bar(x - 0.2, srcc, width=0.4, label="SRCC")
            ax.bar(x + 0.2, plcc, width=0.4, label="PLCC")
            ax.set_xticks(x, labels)
        ax.set_ylabel("correlation")
        ax.legend(frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        return savefig(fig, out_path)


def gmad_montage(pair, paths, defender, attacker, out_path, mos=None, names=("defender", "attacker")):
    """Side-by-side view of one selected pair with both models' scores."""
    from PIL import Image

    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 2.6))
        for ax, image_id in zip(axes, (pair.image_a, pair.image_b)):
            with Image.open(paths[image_id]) as im:
                ax.imshow(np.asarray(im.convert("RGB")))
            caption = f"{image_id}\n{names[0]} {defender[image_id]:.3f} | {names[1]} {attacker[image_id]:.3f}"
            if mos is not None and image_id in mos:
                caption += f" ({mos[image_id]:.2f})"
            ax.set_title(caption, fontsize=8)
            ax.axis("off")
        fig.suptitle(f"level {pair.level}: defender gap {pair.defender_gap:.3g}, "
                     f"attacker gap {pair.attacker_gap:.3g}", fontsize=9)
        return savefig(fig, out_path)
