from typing import Callable, Dict

import numpy as np
import torch
import torch.nn.functional as F

from modules.utils.Errors import InvalidArgument

# 灰度权重 (ITU-R BT.601)
_LUMA = torch.tensor([0.299, 0.587, 0.114])

SALIENCY_METHODS: Dict[str, Callable[[torch.Tensor], torch.Tensor]] = dict()


def register_saliency(name):
    """装饰器，把显著性算法注册到 SALIENCY_METHODS，便于替换成其他实现"""
    def decorator(func):
        SALIENCY_METHODS[name] = func
        return func

    return decorator


def _grayscale(image: torch.Tensor) -> torch.Tensor:
    if image.ndim != 3 or image.numel() == 0:
        raise InvalidArgument(f"需要非空的 (C,H,W) 图像，得到 {tuple(image.shape)}")
    if image.shape[0] == 3:
        return (image * _LUMA.to(image.dtype).view(3, 1, 1)).sum(dim=0)
    return image.mean(dim=0)


@register_saliency("gradient")
def fine_grained_saliency(image: torch.Tensor) -> torch.Tensor:
    """
    细粒度显著性的替代实现：灰度图中心差分梯度的L2幅值，再做3x3均值滤波

    Args:
        image: (C,H,W) 图像
    Returns:
        (H,W) 非负显著性场
    """
    gray = _grayscale(image.detach().to(torch.float64))[None, None]
    padded = F.pad(gray, (1, 1, 1, 1), mode="replicate")
    gx = (padded[..., 1:-1, 2:] - padded[..., 1:-1, :-2]) / 2
    gy = (padded[..., 2:, 1:-1] - padded[..., :-2, 1:-1]) / 2
    magnitude = torch.sqrt(gx ** 2 + gy ** 2)
    # 边界复制填充后做3x3均值
    smoothed = F.avg_pool2d(F.pad(magnitude, (1, 1, 1, 1), mode="replicate"), kernel_size=3, stride=1)
    return smoothed[0, 0].to(image.dtype)


def saliency_peak(field: torch.Tensor) -> tuple:
    """显著性最大值位置 (row, col)，并列时取行优先最小下标"""
    flat = int(np.argmax(field.detach().cpu().numpy().reshape(-1)))
    width = field.shape[-1]
    return flat // width, flat % width
