from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import numpy as np

from modules.Modules.Alignment.Boxes import Box, BoxSet, ThresholdGrid, box_iou
from modules.Modules.Attribution.AttributionMap import AttributionMap
from modules.utils.Errors import InvalidArgument
from modules.utils.logger import get_logger

logger = get_logger("Alignment")

MapLike = Union[AttributionMap, np.ndarray]


def _values(attribution: MapLike, boxes: BoxSet) -> np.ndarray:
    values = attribution.values if isinstance(attribution, AttributionMap) else np.asarray(attribution)
    values = values.astype(np.float64)
    if values.shape != (boxes.height, boxes.width):
        raise InvalidArgument(f"归因图 {values.shape} 与框的图像尺寸 {(boxes.height, boxes.width)} 不符")
    return values


def _require_normalized(values: np.ndarray) -> None:
    if values.size and (values.min() < 0 or values.max() > 1):
        raise InvalidArgument(f"归因图未归一化到 [0,1]: [{values.min()}, {values.max()}]")


def energy_pg(attribution: MapLike, boxes: BoxSet) -> float:
    """框并集内的能量占总能量的比例，总能量为0时返回0"""
    values = _values(attribution, boxes)
    total = values.sum()
    if total <= 0:
        return 0.0
    return float(values[boxes.union_mask()].sum() / total)


@dataclass
class EHRDetail:
    score: float       # 按阈值区间长度归一化后的 AUC
    raw_auc: float     # 未归一化的梯形面积
    ratios: np.ndarray


def ehr_detail(attribution: MapLike, boxes: BoxSet, grid: ThresholdGrid,
               numerator: Literal["thresholded", "raw"] = "thresholded") -> EHRDetail:
    """
    EHR 的完整结果

    Args:
        numerator: thresholded 时分子只统计超过阈值的像素 (L*S)，raw 时统计框内全部 L
    """
    if numerator not in ("thresholded", "raw"):
        raise InvalidArgument(f"未知的分子口径 {numerator}")
    values = _values(attribution, boxes)
    _require_normalized(values)
    inside = boxes.union_mask()
    thresholds = grid.array()
    ratios = np.zeros(len(thresholds), dtype=np.float64)
    previous, empty = 0.0, 0
    for i, lam in enumerate(thresholds):
        selected = values > lam
        count = int(selected.sum())
        if count == 0:
            # 没有超过阈值的像素时沿用上一个比例
            ratios[i] = previous
            empty += 1
            continue
        energy = values[selected & inside].sum() if numerator == "thresholded" else values[inside].sum()
        ratios[i] = energy / count
        previous = ratios[i]
    if empty:
        logger.warning(f"[EHR] {empty}/{len(thresholds)} 个阈值没有超过阈值的像素")
    raw_auc = float(np.trapezoid(ratios, thresholds))
    return EHRDetail(score=raw_auc / float(thresholds[-1] - thresholds[0]), raw_auc=raw_auc, ratios=ratios)


def ehr(attribution: MapLike, boxes: BoxSet, grid: ThresholdGrid = None,
        numerator: Literal["thresholded", "raw"] = "thresholded") -> float:
    """Effective Heat Ratio"""
    return ehr_detail(attribution, boxes, grid or ThresholdGrid.linspace(), numerator).score


def tightest_box(mask: np.ndarray) -> Optional[Box]:
    """包含全部前景像素的最小矩形，空掩码返回 None"""
    rows = np.flatnonzero(mask.any(axis=1))
    if len(rows) == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def wsol_iou(attribution: MapLike, boxes: BoxSet, threshold: float = 0.15) -> Tuple[float, Optional[Box]]:
    """按阈值二值化后取最小外接框，返回与最匹配的真值框的 IoU 以及估计框"""
    values = _values(attribution, boxes)
    _require_normalized(values)
    estimated = tightest_box(values > threshold)
    if estimated is None:
        return 0.0, None
    return max(box_iou(estimated, b) for b in boxes.boxes), estimated


def gain_ratio(attribution: MapLike, reference: MapLike, boxes: BoxSet) -> Optional[float]:
    """
    相对参考模型（通常是 baseline）的增益比：框内能量的增量 / 总能量的增量
    总能量没有增加时无定义，返回 None
    """
    values = _values(attribution, boxes)
    ref = _values(reference, boxes)
    inside = boxes.union_mask()
    total_gain = values.sum() - ref.sum()
    if total_gain <= 0:
        return None
    return float((values[inside].sum() - ref[inside].sum()) / total_gain)
