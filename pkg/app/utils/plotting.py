"""
SVG figures: ROC curves, feature importance, model comparison, predicted vs observed

Files are byte-reproducible: fixed hash salt and no creation date in the metadata.
"""
from pathlib import Path
from typing import Dict, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

plt.rcParams["svg.hashsalt"] = "crashcast"
plt.rcParams["svg.fonttype"] = "none"


def save_svg(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def roc_svg(curves: Dict[str, pd.DataFrame], path: Union[str, Path], title: str = "ROC") -> Path:
    """One polyline per curve; frames hold fpr and tpr columns"""
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, frame in curves.items():
        ax.plot(frame["fpr"], frame["tpr"], label=label, linewidth=1.2)
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=0.8)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right")
    return save_svg(fig, path)


def importance_svg(report: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Bars of feature importance; dropped features are hatched"""
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(report))
    bars = ax.bar(x, report["importance"], color="steelblue")
    for bar, kept in zip(bars, report["kept"]):
        if not kept:
            bar.set_color("lightgrey")
            bar.set_hatch("//")
    ax.set_xticks(x)
    ax.set_xticklabels(report["feature"], rotation=45, ha="right")
    ax.set_ylabel("Importance")
    ax.set_title("Extra-trees feature importance")
    fig.tight_layout()
    return save_svg(fig, path)


def comparison_svg(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    metrics = [m for m in ("auc", "false_alarm_rate", "precision", "rmse") if m in table.columns]
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(table), 1)
    x = np.arange(len(metrics))
    for i, row in enumerate(table.itertuples(index=False)):
        values = [getattr(row, m) for m in metrics]
        ax.bar(x + i * width, values, width, label=row.model)
    ax.set_xticks(x + width * (len(table) - 1) / 2)
    ax.set_xticklabels(metrics)
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title("Model comparison")
    fig.tight_layout()
    return save_svg(fig, path)


def predictions_svg(frame: pd.DataFrame, path: Union[str, Path], title: str = "Predicted vs observed") -> Path:
    fig, ax = plt.subplots(figsize=(8, 3.5))
    order = np.arange(len(frame))
    ax.plot(order, frame["observed"], linestyle="none", marker="o", markersize=2, label="observed")
    ax.plot(order, frame["predicted"], linewidth=0.6, label="predicted")
    ax.set_xlabel("Window")
    ax.set_ylabel("Crash risk")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(title)
    ax.legend(loc="upper right")
    fig.tight_layout()
    return save_svg(fig, path)
