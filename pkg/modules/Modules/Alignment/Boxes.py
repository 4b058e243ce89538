from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from modules.utils.Errors import InvalidArgument

Box = Tuple[int, int, int, int]  # (x0, y0, x1, y1)，右下角不包含


@dataclass(frozen=True)
class BoxSet:
    """一张图上的一个或多个真值框，所有指标都使用它们的并集"""
    boxes: Tuple[Box, ...]
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgument(f"图像尺寸非法: {self.width}x{self.height}")
        if not self.boxes:
            raise InvalidArgument("BoxSet 至少需要一个框")
        for x0, y0, x1, y1 in self.boxes:
            if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
                raise InvalidArgument(f"框 {(x0, y0, x1, y1)} 为空或超出 {self.width}x{self.height} 图像")

    @classmethod
    def of(cls, boxes: Sequence[Sequence[int]], width: int, height: int) -> "BoxSet":
        return cls(boxes=tuple(tuple(int(v) for v in b) for b in boxes), width=width, height=height)

    def union_mask(self) -> np.ndarray:
        """(H,W) 布尔掩码，重叠像素只计一次"""
        mask = np.zeros((self.height, self.width), dtype=bool)
        for x0, y0, x1, y1 in self.boxes:
            mask[y0:y1, x0:x1] = True
        return mask

    @property
    def area_fraction(self) -> float:
        return float(self.union_mask().mean())

    def as_list(self) -> List[List[int]]:
        return [list(b) for b in self.boxes]


@dataclass(frozen=True)
class ThresholdGrid:
    """EHR 的阈值序列，严格递增，取值在 [0,1)"""
    values: Tuple[float, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or len(values) < 2:
            raise InvalidArgument("阈值序列至少需要2个值")
        if np.any(np.diff(values) <= 0):
            raise InvalidArgument("阈值序列必须严格递增")
        if values[0] < 0 or values[-1] >= 1:
            raise InvalidArgument("阈值必须在 [0,1) 内")

    @classmethod
    def linspace(cls, count: int = 100, low: float = 0.0, high: float = 0.99) -> "ThresholdGrid":
        return cls(values=tuple(float(v) for v in np.linspace(low, high, count)))

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def box_iou(a: Box, b: Box) -> float:
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0
