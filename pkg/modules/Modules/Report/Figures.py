import string
from typing import Dict, List, Optional, Sequence

import matplotlib
matplotlib.use("Agg")  # 无界面后端
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib.patches import Rectangle

from modules.Modules.Attribution.AttributionMap import AttributionMap
from modules.Modules.Report.Tables import augmentation_of, ordered_augmentations
from modules.utils.logger import get_logger

logger = get_logger("Figures")

matplotlib.rcParams["svg.fonttype"] = "none"
matplotlib.rcParams["axes.unicode_minus"] = False

X_LABELS = {"deletion": "fraction removed", "insertion": "fraction inserted"}
Y_LABEL = "normalized model score"
# 每一行的三个面板：主排序曲线、随机排序曲线、差值曲线
PANEL_CURVES = ("main", "rao", "difference")
PANEL_TITLES = {("deletion", "main"): "LeRF deletion", ("deletion", "rao"): "RaO deletion",
                ("deletion", "difference"): "LeRF - RaO",
                ("insertion", "main"): "MoRF insertion", ("insertion", "rao"): "RaO insertion",
                ("insertion", "difference"): "MoRF - RaO"}


def curves_figure(rows: List[dict], path: str, method: str) -> plt.Figure:
    """
    2x3 的删除/插入曲线图，面板 (a)-(f)，每个方案一条均值曲线，阴影是标准误

    Args:
        rows: curves.jsonl 中同一次运行、同一种归因方法的行
    """
    fig, axes = plt.subplots(2, 3, figsize=(13, 7.5))
    by_key = {(augmentation_of(r["model_id"]), r["mode"], r["curve"]): r for r in rows if r["method"] == method}
    augmentations = ordered_augmentations({k[0] for k in by_key})
    for i, mode in enumerate(("deletion", "insertion")):
        for j, curve in enumerate(PANEL_CURVES):
            ax = axes[i, j]
            for augmentation in augmentations:
                row = by_key.get((augmentation, mode, curve))
                if row is None:
                    continue
                x, mean, se = (np.asarray(row[k], dtype=np.float64) for k in ("x", "mean", "se"))
                ax.plot(x, mean, label=augmentation, linewidth=1.2)
                ax.fill_between(x, mean - se, mean + se, alpha=0.2)
            if curve == "difference":
                ax.axhline(0.0, color="black", linewidth=0.6, linestyle="--")
            ax.set_title(f"({string.ascii_lowercase[3 * i + j]}) {PANEL_TITLES[(mode, curve)]}")
            ax.set_xlabel(X_LABELS[mode])
            ax.set_ylabel(Y_LABEL)
            ax.grid(alpha=0.3)
    axes[0, 0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"[Report] 曲线图已写入 {path}")
    return fig


def concept_bars(table: pd.DataFrame, path: str) -> plt.Figure:
    """每个类别一个面板，柱子是各方案的不同概念数"""
    categories = list(table.columns)
    fig, axes = plt.subplots(1, max(len(categories), 1), figsize=(3.2 * max(len(categories), 1), 3.4), squeeze=False)
    for ax, category in zip(axes[0], categories):
        ax.bar(range(len(table.index)), table[category].to_numpy(), color="tab:blue")
        ax.set_xticks(range(len(table.index)), list(table.index), rotation=40, ha="right", fontsize=8)
        ax.set_title(category)
        ax.set_ylabel("unique concepts")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"[Report] 概念计数图已写入 {path}")
    return fig


def _draw_box(ax, box: Sequence[float], color: str) -> None:
    x0, y0, x1, y1 = box
    # 框的终点不含，像素中心在整数坐标上
    ax.add_patch(Rectangle((x0 - 0.5, y0 - 0.5), x1 - x0, y1 - y0, fill=False, edgecolor=color, linewidth=1.5))


def qualitative_grid(images: Dict[int, np.ndarray], boxes: Dict[int, List[Sequence[float]]],
                     maps: Dict[str, Dict[int, AttributionMap]], path: str,
                     details: Optional[Dict[tuple, dict]] = None) -> plt.Figure:
    """
    行是样本，列是方案；归因热力图叠在原图上
    真值框画红色，WSOL 估计框画绿色，标题里写相对 baseline 的增益比

    Args:
        images: 样本编号 -> (C,H,W) 图像
        boxes: 样本编号 -> 真值框
        maps: 模型标识 -> 样本编号 -> 归因图
        details: (模型标识, 样本编号) -> per_sample 行
    """
    details = details or {}
    indices = sorted(images)
    order = ordered_augmentations({augmentation_of(k) for k in maps})
    model_ids = sorted(maps, key=lambda m: order.index(augmentation_of(m)))
    fig, axes = plt.subplots(len(indices), len(model_ids) + 1, figsize=(2.0 * (len(model_ids) + 1), 2.0 * len(indices)),
                             squeeze=False)
    for r, index in enumerate(indices):
        image = np.clip(np.transpose(images[index], (1, 2, 0)), 0, 1)
        if image.shape[-1] == 1:
            image = image[..., 0]
        axes[r, 0].imshow(image, interpolation="nearest")
        for box in boxes[index]:
            _draw_box(axes[r, 0], box, "red")
        axes[r, 0].set_title("input", fontsize=8)
        for c, model_id in enumerate(model_ids, start=1):
            ax = axes[r, c]
            ax.imshow(image, interpolation="nearest")
            attribution = maps[model_id].get(index)
            if attribution is not None:
                ax.imshow(attribution.normalized_copy().values, cmap="jet", alpha=0.5, interpolation="bilinear")
            for box in boxes[index]:
                _draw_box(ax, box, "red")
            row = details.get((model_id, index), {})
            if row.get("wsol_box"):
                _draw_box(ax, row["wsol_box"], "lime")
            title = augmentation_of(model_id)
            if row.get("gain_ratio") is not None:
                title += f"\ngain {row['gain_ratio']:.2f}"
            ax.set_title(title, fontsize=8)
    for ax in axes.flat:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"[Report] 定性图已写入 {path}")
    return fig
