from typing import Iterable, List, Optional

import numpy as np
import pandas as pd

from modules.Modules.BaseConfig import AUGMENTATIONS, METHODS
from modules.Modules.Harness.SceneGenerator import CATEGORIES
from modules.utils.Errors import NoData
from modules.utils.RecordStore import ResultRecord

METHOD_LABELS = {"gradcam": "GradCAM", "iba": "IBA"}
METRIC_LABELS = {"energy_pg": "EnergyPG", "ehr": "EHR", "wsol_iou": "WSOL IoU",
                 "inter_model_deletion": "Inter-model deletion", "inter_model_insertion": "Inter-model insertion"}


def augmentation_of(model_id: str) -> str:
    """baseline-s0 -> baseline"""
    return model_id.rsplit("-s", 1)[0]


def records_frame(records: Iterable[ResultRecord]) -> pd.DataFrame:
    rows = []
    for record in records:
        row = record.model_dump(exclude={"extra"})
        row["augmentation"] = augmentation_of(record.model_id)
        row.update({f"extra.{k}": v for k, v in record.extra.items() if np.isscalar(v)})
        rows.append(row)
    if not rows:
        raise NoData("没有可用于报告的记录")
    return pd.DataFrame(rows)


def format_cell(mean: Optional[float], se: Optional[float], digits: int = 3) -> str:
    """mean ± se"""
    if mean is None or pd.isna(mean):
        return "n/a"
    if se is None or pd.isna(se):
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f} ± {se:.{digits}f}"


def ordered_augmentations(index: Iterable[str]) -> List[str]:
    known = [a for a in AUGMENTATIONS if a in index]
    return known + sorted(a for a in index if a not in AUGMENTATIONS)


def metric_table(frame: pd.DataFrame, metrics: List[str], methods: Iterable[str] = METHODS,
                 digits: int = 3) -> pd.DataFrame:
    """
    行是增强方案，列是 (指标, 方法)，单元格是 "mean ± se"
    缺失的组合留作 n/a
    """
    table = pd.DataFrame(index=ordered_augmentations(set(frame["augmentation"])))
    table.index.name = "augmentation"
    for metric in metrics:
        for method in methods:
            column = f"{METRIC_LABELS.get(metric, metric)} ({METHOD_LABELS.get(method, method)})"
            subset = frame[(frame["metric"] == metric) & (frame["method"] == method)].set_index("augmentation")
            table[column] = [format_cell(subset["value"].get(a), subset["se"].get(a), digits) for a in table.index]
    return table


def alignment_table(frame: pd.DataFrame) -> pd.DataFrame:
    """EnergyPG 和 EHR，两种归因方法"""
    return metric_table(frame, ["energy_pg", "ehr"])


def wsol_table(frame: pd.DataFrame) -> pd.DataFrame:
    return metric_table(frame, ["wsol_iou"])


def faithfulness_table(frame: pd.DataFrame, mode: str) -> pd.DataFrame:
    """
    跨模型删除或插入的 AUC ± SE，附加主曲线和 RaO 曲线各自的 AUC
    """
    metric = f"inter_model_{mode}"
    table = metric_table(frame, [metric], digits=3)
    subset = frame[frame["metric"] == metric]
    for column in ("main_auc", "rao_auc"):
        key = f"extra.{column}"
        if key not in subset:
            continue
        for method in set(subset["method"]):
            values = subset[subset["method"] == method].set_index("augmentation")[key]
            table[f"{column} ({METHOD_LABELS.get(method, method)})"] = [format_cell(values.get(a), None)
                                                                         for a in table.index]
    return table


def concept_table(frame: pd.DataFrame) -> pd.DataFrame:
    """每个方案在四个类别里的不同概念数"""
    metrics = [f"unique_concepts_{c}" for c in CATEGORIES]
    subset = frame[frame["metric"].isin(metrics)]
    if subset.empty:
        return pd.DataFrame()
    table = subset.pivot_table(index="augmentation", columns="metric", values="value", aggfunc="last")
    table = table.reindex(index=ordered_augmentations(table.index), columns=[m for m in metrics if m in table.columns])
    table.columns = [m.replace("unique_concepts_", "") for m in table.columns]
    return table.fillna(0).astype(int)


def ranking(frame: pd.DataFrame, metric: str, method: Optional[str] = None) -> List[str]:
    """按指标值从高到低排列的方案，method 为空时对所有方法取平均"""
    subset = frame[frame["metric"] == metric]
    if method is not None:
        subset = subset[subset["method"] == method]
    if subset.empty:
        return []
    means = subset.groupby("augmentation")["value"].mean().sort_values(ascending=False, kind="stable")
    return list(means.index)
