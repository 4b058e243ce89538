from typing import Callable, Optional

import numpy as np
import torch.nn as nn

from modules.Modules.Attribution.AttributionMap import AttributionMap
from modules.Modules.Attribution.GradCAM import gradcam
from modules.Modules.Attribution.IBA import FeatureStats, iba
from modules.Modules.BaseConfig import ExperimentConfig
from modules.utils.Errors import InvalidArgument

ATTRIBUTION_METHODS = dict()


def register_attribution(name):
    def decorator(func):
        ATTRIBUTION_METHODS[name] = func
        return func

    return decorator


@register_attribution("gradcam")
def _gradcam(model, image, target_class, config, stats, rng) -> AttributionMap:
    return gradcam(model, image, target_class)


@register_attribution("iba")
def _iba(model, image, target_class, config, stats, rng) -> AttributionMap:
    if stats is None:
        raise InvalidArgument("IBA 需要先用 iba_fit_statistics 估计瓶颈层统计量")
    return iba(model, image, target_class, config.iba_beta, config.iba_steps, stats, rng,
               layer=config.iba_layer, lr=config.iba_lr, samples=config.iba_samples)


def attribute(method: str, model: nn.Module, image: np.ndarray, target_class: int, config: ExperimentConfig,
              stats: Optional[FeatureStats] = None, rng: Optional[np.random.Generator] = None) -> AttributionMap:
    """按名称调用归因方法"""
    func: Callable = ATTRIBUTION_METHODS.get(method)
    if func is None:
        raise InvalidArgument(f"归因方法 {method} 不存在，可选: {list(ATTRIBUTION_METHODS)}")
    return func(model, image, target_class, config, stats, rng)
