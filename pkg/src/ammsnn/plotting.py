"""Figures written next to the text reports."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import QUESTION_TYPES, EvalReport  # noqa: E402

PathLike = Union[str, Path]


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_curve(log: Sequence[Dict], path: PathLike) -> Path:
    """Mean hinge loss per epoch, with dev metrics on a twin axis when present."""
    epochs = [r["epoch"] for r in log]
    fig, ax = plt.subplots(figsize=(6, 3.7))
    ax.plot(epochs, [r["loss"] for r in log], color="k", lw=1.5, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean hinge loss")
    dev_keys = [k for k in ("dev_map", "dev_mrr", "dev_top1_accuracy") if log and k in log[0]]
    if dev_keys:
        ax2 = ax.twinx()
        for key, style in zip(dev_keys, ("-", "--", ":")):
            ax2.plot(epochs, [r[key] for r in log], ls=style, color="tab:blue", label=key[4:])
        ax2.set_ylim(0, 1.02)
        ax2.set_ylabel("dev metric")
        ax2.legend(loc="center right", frameon=False, fontsize=8)
    ax.spines["top"].set_visible(False)
    return _save(fig, path)


def plot_question_types(report: EvalReport, path: PathLike) -> Path:
    """Radar chart of per-question-type MAP / MRR / accuracy over the six wh-types."""
    labels = list(QUESTION_TYPES)
    angles = np.linspace(0, 2 * np.pi, len(labels), endpoint=False).tolist()
    fig = plt.figure(figsize=(4.5, 4.5))
    ax = fig.add_subplot(111, polar=True)
    for metric, color in (("map", "tab:blue"), ("mrr", "tab:orange"), ("top1_accuracy", "tab:green")):
        vals: List[float] = []
        for t in labels:
            sub = report.per_type.get(t)
            vals.append(getattr(sub, metric) if sub is not None else 0.0)
        ax.plot(angles + angles[:1], vals + vals[:1], color=color, lw=1.2, label=metric)
        ax.fill(angles + angles[:1], vals + vals[:1], color=color, alpha=0.08)
    ax.set_xticks(angles)
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1)
    ax.legend(loc="upper right", bbox_to_anchor=(1.3, 1.1), fontsize=8, frameon=False)
    return _save(fig, path)


def plot_attention(record: Dict, path: PathLike) -> Path:
    """Heatmap of the unmasked block of one dumped attention matrix."""
    M, N = record["shape"]
    Tm = np.asarray(record["T"]).reshape(M, N)
    q, a = record["question_tokens"], record["answer_tokens"]
    block = Tm[: len(q), : len(a)]
    fig, ax = plt.subplots(figsize=(0.35 * len(a) + 2, 0.35 * len(q) + 1.5))
    im = ax.imshow(block, cmap="RdBu_r", vmin=-1, vmax=1, aspect="auto")
    ax.set_xticks(range(len(a)))
    ax.set_xticklabels(a, rotation=90, fontsize=7)
    ax.set_yticks(range(len(q)))
    ax.set_yticklabels(q, fontsize=7)
    fig.colorbar(im, ax=ax, fraction=0.04)
    return _save(fig, path)
