from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from modules.Modules.Alignment.Boxes import BoxSet
from modules.Modules.Harness.Dataset import LabeledSet
from modules.Modules.Harness.Oracle import Scorer
from modules.utils.Errors import InsufficientSamples, InvalidArgument
from modules.utils.logger import get_logger

logger = get_logger("Selection")


@dataclass
class EvalSample:
    """一张评估样本：图像、真值类别、框，以及每个模型对真值类别的概率"""
    index: int
    image: np.ndarray
    label: int
    boxes: BoxSet
    scores: Dict[str, float] = field(default_factory=dict)

    @property
    def area_fraction(self) -> float:
        return self.boxes.area_fraction

    def to_row(self) -> dict:
        return {"index": self.index, "label": self.label, "boxes": self.boxes.as_list(),
                "area_fraction": self.area_fraction, "scores": self.scores}


def select_eval_samples(oracles: Dict[str, Scorer], dataset: LabeledSet, n: int, rng: np.random.Generator,
                        score_threshold: float = 0.6,
                        area_range: Tuple[float, float] = (0.10, 0.50)) -> List[EvalSample]:
    """
    筛选所有模型都以 > score_threshold 的概率预测对、且框并集面积比在 area_range 开区间内的样本，再随机抽 n 个

    Args:
        oracles: 模型标识 -> 打分器，通常是五个训练方案
        dataset: 带框的数据集
        n: 抽样数
        rng: 随机数源
    """
    if n < 1:
        raise InvalidArgument(f"n 必须为正，得到 {n}")
    if not oracles:
        raise InvalidArgument("至少需要一个模型")
    _, _, height, width = dataset.images.shape
    low, high = area_range

    box_sets, area_ok = [], np.zeros(len(dataset), dtype=bool)
    for i, boxes in enumerate(dataset.boxes):
        if not boxes:
            box_sets.append(None)
            continue
        box_set = BoxSet.of(boxes, width, height)
        box_sets.append(box_set)
        area_ok[i] = low < box_set.area_fraction < high

    passed = area_ok.copy()
    scores: Dict[str, np.ndarray] = {}
    for model_id, oracle in oracles.items():
        true_prob = np.empty(len(dataset), dtype=np.float64)
        for label in np.unique(dataset.labels):
            index = np.flatnonzero(dataset.labels == label)
            true_prob[index] = oracle.score(dataset.images[index], int(label))
        scores[model_id] = true_prob
        passed &= true_prob > score_threshold

    candidates = np.flatnonzero(passed)
    logger.info(f"[Select] {len(dataset)} 个样本中 {int(area_ok.sum())} 个通过面积筛选，{len(candidates)} 个通过全部筛选")
    if len(candidates) < n:
        raise InsufficientSamples(len(candidates), n)
    chosen = np.sort(rng.choice(candidates, size=n, replace=False))
    return [EvalSample(index=int(i), image=dataset.images[i], label=int(dataset.labels[i]), boxes=box_sets[i],
                       scores={m: float(s[i]) for m, s in scores.items()}) for i in chosen]
