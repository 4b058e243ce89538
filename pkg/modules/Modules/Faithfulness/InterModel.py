from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, List, Literal, Optional, Sequence

import numpy as np

from modules.Modules.Attribution.AttributionMap import AttributionMap
from modules.Modules.BaseConfig import ExperimentConfig
from modules.Modules.Faithfulness.Curves import ScoreCurve, aggregate, deletion_curve, insertion_curve, rao_mean_curve
from modules.Modules.Faithfulness.Grid import ReplacementPolicy, rank_grids
from modules.Modules.Harness.Oracle import Scorer
from modules.utils.Errors import InvalidArgument
from modules.utils.logger import get_logger

logger = get_logger("InterModel")

# 删除用 LeRF，插入用 MoRF
MAIN_ORDERING = {"deletion": "LeRF", "insertion": "MoRF"}

# 逐图像工作的调度方式：(func, items) -> 按输入顺序的结果列表，管线里传 PipeLine.fan_out
MapFunc = Callable[[Callable, Iterable], List[Any]]


def serial_map(func: Callable, items: Iterable) -> List[Any]:
    return [func(item) for item in items]


@dataclass
class FaithfulnessSettings:
    cell_px: int = 4
    grid_mode: Literal["cells", "partition"] = "cells"
    n_orders: int = 5
    stride: int = 1
    fill: ReplacementPolicy = None

    @classmethod
    def from_config(cls, config: ExperimentConfig, channel_mean: Optional[np.ndarray]) -> "FaithfulnessSettings":
        return cls(cell_px=config.cell_px, grid_mode=config.grid_mode, n_orders=config.n_orders,
                   stride=config.curve_stride,
                   fill=ReplacementPolicy(config.fill, channel_mean))


@dataclass
class InterModelScore:
    """
    一个模式（删除或插入）的结果
    auc = trapz(主曲线均值 - RaO 均值) * 100；se 是差值曲线逐步标准误的平均（分数单位，不乘100）
    """
    mode: str
    auc: float
    se: float
    main: ScoreCurve
    rao: ScoreCurve
    difference: ScoreCurve
    main_auc: float
    rao_auc: float
    auc_se: float  # 逐图像 AUC 的标准误，乘100

    def summary(self) -> dict:
        return {"main_auc": self.main_auc * 100, "rao_auc": self.rao_auc * 100, "auc_se": self.auc_se,
                "ordering": MAIN_ORDERING[self.mode]}


@dataclass
class FaithfulnessResult:
    model_id: str
    method: str
    deletion: Optional[InterModelScore] = None
    insertion: Optional[InterModelScore] = None
    config_hash: str = ""
    n_images: int = field(default=0)


def _image_curves(oracle: Scorer, image: np.ndarray, attribution: AttributionMap, mode: str,
                  settings: FaithfulnessSettings, seed_seq: np.random.SeedSequence):
    rng = np.random.default_rng(seed_seq)
    target = oracle.predict(image)
    ranking = rank_grids(attribution, settings.cell_px, MAIN_ORDERING[mode], mode=settings.grid_mode)
    curve_func = deletion_curve if mode == "deletion" else insertion_curve
    main = curve_func(oracle, image, ranking, settings.fill, target=target, stride=settings.stride)
    rao = rao_mean_curve(oracle, image, settings.cell_px, settings.n_orders, rng, settings.fill, mode,
                         target=target, stride=settings.stride, grid_mode=settings.grid_mode)
    return main, rao


def inter_model_score(oracle: Scorer, images: Sequence[np.ndarray], maps: Sequence[AttributionMap],
                      mode: Literal["deletion", "insertion"], settings: FaithfulnessSettings,
                      seed: int = 0, map_func: MapFunc = serial_map) -> InterModelScore:
    """
    跨模型可比的删除/插入分数：每张图的主曲线减去它的 RaO 均值曲线，再在图像间平均

    Args:
        oracle: 被评估模型的打分器
        images: 评估图像 (C,H,W)
        maps: 与 images 一一对应的归因图，来自同一模型和方法
        mode: deletion 或 insertion
        settings: 网格、填充、随机顺序数等
        seed: 每张图的 RaO 随机流由它派生，与调度顺序无关
        map_func: 逐图像工作的调度，并行时由调用方限流
    """
    if mode not in MAIN_ORDERING:
        raise InvalidArgument(f"未知的模式 {mode}")
    if len(images) != len(maps):
        raise InvalidArgument(f"样本数 {len(images)} 与归因图数 {len(maps)} 不一致")
    if len(images) == 0:
        raise InvalidArgument("没有评估样本")
    streams = np.random.SeedSequence(seed).spawn(len(images))
    results = map_func(lambda args: _image_curves(oracle, args[0], args[1], mode, settings, args[2]),
                       list(zip(images, maps, streams)))

    mains = [m for m, _ in results]
    raos = [r for _, r in results]
    differences = [ScoreCurve(x=m.x, y=m.y - r.y) for m, r in results]
    main, rao, difference = aggregate(mains), aggregate(raos), aggregate(differences)
    per_image_auc = np.array([d.auc() for d in differences]) * 100
    auc_se = float(per_image_auc.std(ddof=1) / np.sqrt(len(per_image_auc))) if len(per_image_auc) > 1 else 0.0
    score = InterModelScore(mode=mode, auc=difference.auc() * 100, se=float(difference.se.mean()),
                            main=main, rao=rao, difference=difference, main_auc=main.auc(),
                            rao_auc=rao.auc(), auc_se=auc_se)
    logger.info(f"[Faith] {mode}: {len(images)} 张图，AUC {score.auc:.3f} ± {score.se:.4f}")
    return score


def evaluate_faithfulness(oracle: Scorer, images: Sequence[np.ndarray], maps: Sequence[AttributionMap],
                          settings: FaithfulnessSettings, model_id: str, method: str,
                          config_hash: str = "", seed: int = 0,
                          map_func: MapFunc = serial_map) -> FaithfulnessResult:
    """同时计算跨模型删除和插入分数"""
    return FaithfulnessResult(
        model_id=model_id, method=method, config_hash=config_hash, n_images=len(images),
        deletion=inter_model_score(oracle, images, maps, "deletion", settings, seed=seed, map_func=map_func),
        insertion=inter_model_score(oracle, images, maps, "insertion", settings, seed=seed, map_func=map_func),
    )
