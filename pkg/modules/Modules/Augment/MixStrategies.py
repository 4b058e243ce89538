import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import torch

from modules.Modules.Augment.Saliency import SALIENCY_METHODS, saliency_peak
from modules.utils.Errors import InvalidArgument

Box = Tuple[int, int, int, int]  # (x0, y0, x1, y1)，右下角不包含


@dataclass
class MixOutcome:
    """一次混合增强的结果，图像为 (C,H,W)"""
    image: torch.Tensor
    label_a: int
    label_b: Optional[int]
    mix_weight: float  # label_a 的权重
    box: Optional[Box] = None


def _check_pair(image_a: torch.Tensor, image_b: torch.Tensor, alpha: float) -> None:
    if image_a.shape != image_b.shape:
        raise InvalidArgument(f"图像形状不一致: {tuple(image_a.shape)} vs {tuple(image_b.shape)}")
    if image_a.numel() == 0:
        raise InvalidArgument("图像为空")
    if alpha <= 0:
        raise InvalidArgument(f"alpha 必须为正，得到 {alpha}")


def _draw_lam(alpha: float, rng: np.random.Generator, lam: Optional[float]) -> float:
    if lam is not None:
        if not 0 <= lam <= 1:
            raise InvalidArgument(f"lam 必须在 [0,1] 内，得到 {lam}")
        return float(lam)
    return float(rng.beta(alpha, alpha))


def _clip_span(center: int, side: int, limit: int) -> Tuple[int, int]:
    # 边长等于整幅图时没有移动余地，直接覆盖全图
    if side >= limit:
        return 0, limit
    start = center - side // 2
    return max(0, start), min(limit, start + side)


def cutout(image: torch.Tensor, patch_side: int, rng: np.random.Generator,
           label: int = 0, center: Optional[Tuple[int, int]] = None) -> MixOutcome:
    """
    以随机像素为中心丢弃一个正方形区域，区域置零

    Args:
        image: (C,H,W) 图像
        patch_side: 正方形边长
        rng: 随机数源
        label: 原标签，保持不变
        center: 指定中心 (row, col)，为空时均匀采样
    """
    if patch_side <= 0:
        raise InvalidArgument(f"patch_side 必须为正，得到 {patch_side}")
    if image.numel() == 0:
        raise InvalidArgument("图像为空")
    _, height, width = image.shape
    if center is None:
        center = (int(rng.integers(height)), int(rng.integers(width)))
    cy, cx = center
    y0 = max(0, cy - patch_side // 2)
    y1 = min(height, cy - patch_side // 2 + patch_side)
    x0 = max(0, cx - patch_side // 2)
    x1 = min(width, cx - patch_side // 2 + patch_side)
    output = image.clone()
    output[:, y0:y1, x0:x1] = 0
    return MixOutcome(image=output, label_a=label, label_b=None, mix_weight=1.0, box=(x0, y0, x1, y1))


def mixup(image_a: torch.Tensor, image_b: torch.Tensor, label_a: int, label_b: int,
          alpha: float, rng: np.random.Generator, lam: Optional[float] = None) -> MixOutcome:
    """线性插值两张图像，lam ~ Beta(alpha, alpha)"""
    _check_pair(image_a, image_b, alpha)
    lam = _draw_lam(alpha, rng, lam)
    output = lam * image_a + (1 - lam) * image_b
    return MixOutcome(image=output, label_a=label_a, label_b=label_b, mix_weight=lam, box=None)


def sample_cut_box(lam: float, width: int, height: int, rng: np.random.Generator,
                   center: Optional[Tuple[int, int]] = None) -> Tuple[Box, float]:
    """
    按 lam 采样裁剪框并按裁剪后的真实面积修正混合比例

    Args:
        lam: 目标混合比例
        width, height: 图像尺寸
        rng: 随机数源
        center: 指定中心 (row, col)，为空时均匀采样
    Returns:
        (box, lam_mix)，lam_mix = 1 - 框面积 / 图像面积
    """
    if not 0 <= lam <= 1:
        raise InvalidArgument(f"lam 必须在 [0,1] 内，得到 {lam}")
    cut_ratio = math.sqrt(1.0 - lam)
    cut_w = int(round(width * cut_ratio))
    cut_h = int(round(height * cut_ratio))
    if center is None:
        center = (int(rng.integers(height)), int(rng.integers(width)))
    cy, cx = center
    x0, x1 = _clip_span(cx, cut_w, width)
    y0, y1 = _clip_span(cy, cut_h, height)
    area = (x1 - x0) * (y1 - y0)
    return (x0, y0, x1, y1), 1.0 - area / (width * height)


def _paste(image_a: torch.Tensor, image_b: torch.Tensor, box: Box) -> torch.Tensor:
    x0, y0, x1, y1 = box
    output = image_a.clone()
    output[:, y0:y1, x0:x1] = image_b[:, y0:y1, x0:x1]
    return output


def cutmix(image_a: torch.Tensor, image_b: torch.Tensor, label_a: int, label_b: int,
           alpha: float, rng: np.random.Generator, lam: Optional[float] = None,
           center: Optional[Tuple[int, int]] = None) -> MixOutcome:
    """把 image_b 的随机矩形区域贴到 image_a 的同一位置"""
    _check_pair(image_a, image_b, alpha)
    lam = _draw_lam(alpha, rng, lam)
    _, height, width = image_a.shape
    box, lam_mix = sample_cut_box(lam, width, height, rng, center=center)
    return MixOutcome(image=_paste(image_a, image_b, box), label_a=label_a, label_b=label_b,
                      mix_weight=lam_mix, box=box)


def saliencymix(image_a: torch.Tensor, image_b: torch.Tensor, label_a: int, label_b: int,
                alpha: float, rng: np.random.Generator, lam: Optional[float] = None,
                saliency: str = "gradient") -> MixOutcome:
    """
    与 cutmix 相同的框大小，但框中心取 image_b 显著性最大的位置

    Args:
        saliency: SALIENCY_METHODS 中注册的显著性算法名
    """
    _check_pair(image_a, image_b, alpha)
    lam = _draw_lam(alpha, rng, lam)
    saliency_func: Callable = SALIENCY_METHODS[saliency]
    peak = saliency_peak(saliency_func(image_b))
    _, height, width = image_a.shape
    box, lam_mix = sample_cut_box(lam, width, height, rng, center=peak)
    return MixOutcome(image=_paste(image_a, image_b, box), label_a=label_a, label_b=label_b,
                      mix_weight=lam_mix, box=box)
