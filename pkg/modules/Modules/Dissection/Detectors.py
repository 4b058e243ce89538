from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Literal, Optional, Union

import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from modules.Modules.Dissection.ConceptCorpus import ConceptCorpus
from modules.Modules.Dissection.Profiles import UnitActivationProfile, collect_profiles, unit_activations
from modules.Modules.Harness.SceneGenerator import CATEGORIES
from modules.utils.Errors import InvalidArgument
from modules.utils.logger import get_logger

logger = get_logger("Detectors")


@dataclass
class DetectorRecord:
    unit: int
    concept: int
    name: str
    category: str
    iou: float


@dataclass
class IoUTable:
    """
    语料级 IoU：intersection / union 都是整个语料上的像素计数之和，形状 (U,K)
    chance_intersection 是单元掩码和概念掩码在图像之间相互独立时交集的期望，只保留两者的空间分布
    """
    intersection: np.ndarray
    union: np.ndarray
    coverage: np.ndarray  # 每个单元 M_k 占全部像素的比例
    chance_intersection: Optional[np.ndarray] = None

    @property
    def iou(self) -> np.ndarray:
        return _ratio(self.intersection, self.union)

    @property
    def chance_iou(self) -> np.ndarray:
        if self.chance_intersection is None:
            raise InvalidArgument("IoU 表没有累计空间分布，无法给出机会水平")
        # |M| + |L| 不变，只把交集换成独立假设下的期望
        union = self.union + self.intersection - self.chance_intersection
        return _ratio(self.chance_intersection, union)


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    return np.divide(numerator, denominator, out=np.zeros_like(numerator, dtype=np.float64), where=denominator > 0)


def iou_table(model: nn.Module, layer: Union[str, nn.Module, None], profiles: List[UnitActivationProfile],
              corpus: ConceptCorpus, batch_size: int = 64) -> IoUTable:
    """
    M_k = 1[上采样后的 A_k > T_k]，对每个 (单元, 概念) 累计 |M_k ∩ L_c| 和 |M_k ∪ L_c|
    同时累计每个像素位置上 M_k 和 L_c 的出现次数，用来算机会水平的交集
    """
    thresholds = torch.tensor([p.threshold for p in profiles], dtype=torch.float32).view(1, -1, 1, 1)
    masks = torch.from_numpy(corpus.masks)
    n_units, n_concepts = len(profiles), len(corpus.concepts)
    intersection = torch.zeros((n_units, n_concepts), dtype=torch.float64)
    unit_sum = torch.zeros(n_units, dtype=torch.float64)
    unit_spatial = torch.zeros((n_units, int(np.prod(corpus.masks.shape[-2:]))), dtype=torch.float64)
    start = 0
    for activation in unit_activations(model, layer, corpus.images, upsample=True, batch_size=batch_size):
        if activation.shape[1] != n_units:
            raise InvalidArgument(f"层有 {activation.shape[1]} 个单元，但给了 {n_units} 个阈值")
        count = activation.shape[0]
        unit_mask = (activation > thresholds).flatten(2).double()
        concept_mask = masks[start:start + count].flatten(2).double()
        intersection += torch.einsum("bup,bkp->uk", unit_mask, concept_mask)
        unit_sum += unit_mask.sum(dim=(0, 2))
        unit_spatial += unit_mask.sum(dim=0)
        start += count
    concept_spatial = masks.flatten(2).double().sum(dim=0)
    concept_sum = concept_spatial.sum(dim=1)
    union = unit_sum[:, None] + concept_sum[None, :] - intersection
    total = float(np.prod(corpus.masks.shape[-2:])) * len(corpus)
    chance = unit_spatial @ concept_spatial.T / max(len(corpus), 1)
    return IoUTable(intersection=intersection.numpy(), union=union.numpy(), coverage=(unit_sum / total).numpy(),
                    chance_intersection=chance.numpy())


def unit_concept_iou(model: nn.Module, unit: int, profile: UnitActivationProfile, corpus: ConceptCorpus,
                     concept: int, layer: Union[str, nn.Module, None] = None) -> float:
    """单个 (单元, 概念) 的语料级 IoU"""
    corpus.concept(concept)
    if profile.unit != unit:
        raise InvalidArgument(f"阈值来自单元 {profile.unit}，请求的是单元 {unit}")
    hits, union = 0.0, 0.0
    mask = corpus.masks[:, concept]
    start = 0
    for activation in unit_activations(model, layer, corpus.images, upsample=True):
        if not 0 <= unit < activation.shape[1]:
            raise InvalidArgument(f"单元 {unit} 超出范围 [0,{activation.shape[1]})")
        unit_mask = (activation[:, unit] > profile.threshold).numpy()
        concept_mask = mask[start:start + len(unit_mask)]
        hits += float(np.logical_and(unit_mask, concept_mask).sum())
        union += float(np.logical_or(unit_mask, concept_mask).sum())
        start += len(unit_mask)
    return hits / union if union > 0 else 0.0


def find_detectors(model: nn.Module, layer: Union[str, nn.Module, None], corpus: ConceptCorpus,
                   iou_threshold: float = 0.04, mode: Literal["best", "all"] = "best",
                   profiles: Optional[List[UnitActivationProfile]] = None,
                   table: Optional[IoUTable] = None) -> List[DetectorRecord]:
    """
    找出 IoU 超过阈值的检测器单元

    Args:
        mode: best 每个单元只记录 IoU 最高的概念（并列取 id 小的）；all 记录全部超过阈值的概念
        profiles: 已有的阈值，为空时现算
        table: 已有的 IoU 表，为空时现算
    """
    if table is None:
        profiles = profiles if profiles is not None else collect_profiles(model, layer, corpus)
        table = iou_table(model, layer, profiles, corpus)
    records = _select(table.iou, corpus, iou_threshold, mode)
    logger.info(f"[Dissect] {table.iou.shape[0]} 个单元中 {len({r.unit for r in records})} 个是检测器")
    return records


def chance_detectors(table: IoUTable, corpus: ConceptCorpus, iou_threshold: float = 0.04,
                     mode: Literal["best", "all"] = "best") -> List[DetectorRecord]:
    """只凭单元和概念的空间分布就能越过阈值的单元，打乱图像对应关系后的检测器期望"""
    return _select(table.chance_iou, corpus, iou_threshold, mode)


def _select(iou: np.ndarray, corpus: ConceptCorpus, iou_threshold: float, mode: str) -> List[DetectorRecord]:
    if mode not in ("best", "all"):
        raise InvalidArgument(f"未知的检测器模式 {mode}")
    records = []
    for unit in range(iou.shape[0]):
        if mode == "best":
            candidates = [int(np.argmax(iou[unit]))]
        else:
            candidates = [int(c) for c in np.flatnonzero(iou[unit] > iou_threshold)]
        for concept_id in candidates:
            if iou[unit, concept_id] > iou_threshold:
                concept = corpus.concepts[concept_id]
                records.append(DetectorRecord(unit=unit, concept=concept_id, name=concept.name,
                                              category=concept.category, iou=float(iou[unit, concept_id])))
    return records


def count_unique_concepts(records: Iterable[DetectorRecord]) -> Dict[str, int]:
    """每个类别里不同概念的数量"""
    unique = {category: set() for category in CATEGORIES}
    for record in records:
        unique[record.category].add(record.concept)
    return {category: len(ids) for category, ids in unique.items()}


def detector_rate(records: Iterable[DetectorRecord], n_units: int) -> float:
    return len({r.unit for r in records}) / n_units if n_units else 0.0


def export_detectors(records: List[DetectorRecord], path: str) -> pd.DataFrame:
    """检测器行 {unit, concept, category, iou} 写成 CSV"""
    frame = pd.DataFrame([asdict(r) for r in records], columns=["unit", "concept", "name", "category", "iou"])
    frame.to_csv(path, index=False)
    return frame
