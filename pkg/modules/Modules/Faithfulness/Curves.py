from dataclasses import dataclass
from typing import Iterator, List, Literal, Optional, Tuple

import numpy as np

from modules.Modules.Faithfulness.Grid import GridRanking, ReplacementPolicy, rank_grids
from modules.Modules.Harness.Oracle import Scorer
from modules.utils.Errors import InvalidArgument, OracleFailure
from modules.utils.logger import get_logger

logger = get_logger("Curves")

# 每次送进打分器的扰动图像数
SWEEP_CHUNK = 256


@dataclass
class ScoreCurve:
    """x 为已处理格子的比例，y 为归一化后的模型分数，se 只在多条曲线聚合后存在"""
    x: np.ndarray
    y: np.ndarray
    se: Optional[np.ndarray] = None

    def auc(self) -> float:
        return float(np.trapezoid(self.y, self.x))

    def to_rows(self) -> List[dict]:
        se = self.se if self.se is not None else np.zeros_like(self.y)
        return [{"x": float(a), "mean": float(b), "se": float(c)} for a, b, c in zip(self.x, self.y, se)]


def _steps(n_cells: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise InvalidArgument(f"stride 必须为正，得到 {stride}")
    steps = np.arange(0, n_cells + 1, stride)
    if steps[-1] != n_cells:
        steps = np.append(steps, n_cells)
    return steps


def _sweep(start: np.ndarray, source: np.ndarray, ranking: GridRanking,
           steps: np.ndarray) -> Iterator[Tuple[int, np.ndarray]]:
    """从 start 出发按 ranking 依次把格子换成 source 的内容，分块产出第 steps 步的图像"""
    current = start.copy()
    done = 0
    batch, first = [], 0
    for i, step in enumerate(steps):
        while done < step:
            rows, cols = ranking.cell_slices(ranking.order[done])
            current[:, rows, cols] = source[:, rows, cols]
            done += 1
        if not batch:
            first = i
        batch.append(current.copy())
        if len(batch) == SWEEP_CHUNK:
            yield first, np.stack(batch)
            batch = []
    if batch:
        yield first, np.stack(batch)


def _score_sweep(oracle: Scorer, start: np.ndarray, source: np.ndarray, ranking: GridRanking,
                 steps: np.ndarray, target: int) -> np.ndarray:
    scores = np.empty(len(steps), dtype=np.float64)
    for first, images in _sweep(start, source, ranking, steps):
        try:
            scores[first:first + len(images)] = oracle.score(images, target)
        except Exception as e:
            raise OracleFailure(int(steps[first]), e) from e
    return scores


def _check(image: np.ndarray, ranking: GridRanking) -> None:
    if image.ndim != 3 or tuple(image.shape[-2:]) != ranking.shape:
        raise InvalidArgument(f"图像 {image.shape} 与网格 {ranking.shape} 不符")


def _normalize(scores: np.ndarray, anchor: float) -> np.ndarray:
    if anchor <= 0:
        logger.warning("[Curve] 未扰动图像的分数为0，曲线记为全0")
        return np.zeros_like(scores)
    return np.clip(scores / anchor, 0.0, 1.0)


def deletion_curve(oracle: Scorer, image: np.ndarray, ranking: GridRanking, fill: ReplacementPolicy,
                   target: Optional[int] = None, stride: int = 1) -> ScoreCurve:
    """
    删除曲线：第 t 步把前 t 个格子换成填充值，分数除以未扰动图像的分数并截断到 [0,1]

    Args:
        target: 跟踪的类别，默认是未扰动图像的 top-1 预测
        stride: 每隔 stride 步评估一次
    """
    image = np.asarray(image, dtype=np.float32)
    _check(image, ranking)
    if target is None:
        target = oracle.predict(image)
    steps = _steps(ranking.n_cells, stride)
    scores = _score_sweep(oracle, image, fill.fill_for(image), ranking, steps, target)
    return ScoreCurve(x=steps / ranking.n_cells, y=_normalize(scores, scores[0]))


def insertion_curve(oracle: Scorer, image: np.ndarray, ranking: GridRanking, fill: ReplacementPolicy,
                    target: Optional[int] = None, stride: int = 1) -> ScoreCurve:
    """插入曲线：从全填充图出发，第 t 步恢复前 t 个格子；归一化锚点同样是未扰动图像的分数"""
    image = np.asarray(image, dtype=np.float32)
    _check(image, ranking)
    if target is None:
        target = oracle.predict(image)
    steps = _steps(ranking.n_cells, stride)
    scores = _score_sweep(oracle, fill.fill_for(image), image, ranking, steps, target)
    # 最后一步就是原图
    return ScoreCurve(x=steps / ranking.n_cells, y=_normalize(scores, scores[-1]))


def aggregate(curves: List[ScoreCurve]) -> ScoreCurve:
    """逐步求均值和标准误"""
    if not curves:
        raise InvalidArgument("没有可聚合的曲线")
    ys = np.stack([c.y for c in curves])
    se = ys.std(axis=0, ddof=1) / np.sqrt(len(curves)) if len(curves) > 1 else np.zeros(ys.shape[1])
    return ScoreCurve(x=curves[0].x, y=ys.mean(axis=0), se=se)


def rao_mean_curve(oracle: Scorer, image: np.ndarray, cell_px: int, n_orders: int, rng: np.random.Generator,
                   fill: ReplacementPolicy, mode: Literal["deletion", "insertion"],
                   target: Optional[int] = None, stride: int = 1,
                   grid_mode: Literal["cells", "partition"] = "cells") -> ScoreCurve:
    """n_orders 条随机顺序曲线的均值，与归因图无关"""
    if n_orders < 1:
        raise InvalidArgument(f"n_orders 至少为1，得到 {n_orders}")
    if mode not in ("deletion", "insertion"):
        raise InvalidArgument(f"未知的模式 {mode}")
    image = np.asarray(image, dtype=np.float32)
    if target is None:
        target = oracle.predict(image)
    placeholder = np.zeros(image.shape[-2:], dtype=np.float32)
    curve_func = deletion_curve if mode == "deletion" else insertion_curve
    curves = [curve_func(oracle, image, rank_grids(placeholder, cell_px, "RaO", rng=rng, mode=grid_mode),
                         fill, target=target, stride=stride) for _ in range(n_orders)]
    return aggregate(curves)
