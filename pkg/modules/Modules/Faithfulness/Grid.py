from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import numpy as np

from modules.Modules.Attribution.AttributionMap import AttributionMap
from modules.utils.Errors import InvalidArgument
from modules.utils.logger import get_logger

logger = get_logger("Grid")

ORDERINGS = ("LeRF", "MoRF", "RaO")


@dataclass
class GridRanking:
    """
    网格排序：格子按行优先编号，order 是处理顺序
    cells 模式下 cell_px 是格子边长（像素），partition 模式下是每边的格子数
    """
    cell_px: int
    ordering: str
    order: np.ndarray
    cell_sums: np.ndarray
    row_edges: np.ndarray
    col_edges: np.ndarray
    partial: bool = False

    @property
    def n_cells(self) -> int:
        return len(self.order)

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.row_edges[-1]), int(self.col_edges[-1])

    def cell_slices(self, cell: int) -> Tuple[slice, slice]:
        n_cols = len(self.col_edges) - 1
        r, c = divmod(int(cell), n_cols)
        return slice(self.row_edges[r], self.row_edges[r + 1]), slice(self.col_edges[c], self.col_edges[c + 1])


def _edges(length: int, cell_px: int, mode: str) -> np.ndarray:
    if mode == "cells":
        return np.append(np.arange(0, length, cell_px), length)
    if mode == "partition":
        if cell_px > length:
            raise InvalidArgument(f"无法把 {length} 像素切成 {cell_px} 份")
        sizes = [len(part) for part in np.array_split(np.arange(length), cell_px)]
        return np.concatenate([[0], np.cumsum(sizes)])
    raise InvalidArgument(f"未知的网格模式 {mode}")


def rank_grids(attribution: Union[AttributionMap, np.ndarray], cell_px: int,
               ordering: Literal["LeRF", "MoRF", "RaO"], rng: Optional[np.random.Generator] = None,
               mode: Literal["cells", "partition"] = "cells") -> GridRanking:
    """
    按格子内归因之和排序

    Args:
        attribution: (H,W) 归因图
        cell_px: 格子边长或每边格子数，见 mode
        ordering: LeRF 升序，MoRF 降序，RaO 随机；并列时行优先编号小的在前
        rng: RaO 必需
        mode: cells 或 partition
    """
    if cell_px <= 0:
        raise InvalidArgument(f"cell_px 必须为正，得到 {cell_px}")
    if ordering not in ORDERINGS:
        raise InvalidArgument(f"未知的排序方式 {ordering}")
    values = attribution.values if isinstance(attribution, AttributionMap) else np.asarray(attribution)
    values = values.astype(np.float64)
    height, width = values.shape
    row_edges, col_edges = _edges(height, cell_px, mode), _edges(width, cell_px, mode)
    partial = mode == "cells" and (height % cell_px != 0 or width % cell_px != 0)
    if partial:
        logger.warning(f"[Grid] {height}x{width} 不能被 {cell_px} 整除，末尾格子不完整")

    sums = np.add.reduceat(np.add.reduceat(values, row_edges[:-1], axis=0), col_edges[:-1], axis=1).reshape(-1)
    index = np.arange(len(sums))
    if ordering == "LeRF":
        order = np.lexsort((index, sums))
    elif ordering == "MoRF":
        order = np.lexsort((index, -sums))
    else:
        if rng is None:
            raise InvalidArgument("RaO 排序需要随机数源")
        order = rng.permutation(len(sums))
    return GridRanking(cell_px=cell_px, ordering=ordering, order=order, cell_sums=sums,
                       row_edges=row_edges, col_edges=col_edges, partial=partial)


@dataclass
class ReplacementPolicy:
    """
    删除/插入时的填充值
    mean: 数据集逐通道均值；image_mean: 当前图像的逐通道均值
    """
    kind: Literal["mean", "image_mean"] = "mean"
    channel_mean: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("mean", "image_mean"):
            raise InvalidArgument(f"未知的填充方式 {self.kind}")
        if self.kind == "mean" and self.channel_mean is None:
            raise InvalidArgument("mean 填充需要数据集的逐通道均值")

    def fill_for(self, image: np.ndarray) -> np.ndarray:
        """与 image 同形状的常数填充图"""
        if self.kind == "mean":
            value = np.asarray(self.channel_mean, dtype=image.dtype)
        else:
            value = image.mean(axis=(1, 2)).astype(image.dtype)
        if value.shape != (image.shape[0],):
            raise InvalidArgument(f"填充值通道数 {value.shape} 与图像 {image.shape} 不符")
        return np.broadcast_to(value[:, None, None], image.shape).copy()
