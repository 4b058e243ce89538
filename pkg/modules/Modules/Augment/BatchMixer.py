from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np
import torch
from torchvision.transforms.v2 import functional as TF

from modules.Modules.Augment.MixStrategies import cutmix, cutout, mixup, saliencymix
from modules.Modules.BaseConfig import ExperimentConfig
from modules.utils.Errors import InvalidArgument

BASE_TRANSFORMS = ["horizontal_flip", "random_crop_pad4"]
CROP_PADDING = 4

METHODS = dict()


def get_method(name: str) -> Callable:
    method = METHODS.get(name, None)
    if method is None:
        raise InvalidArgument(f"增强方式 {name} 不存在，可选: {get_method_names()}")
    return method


def get_method_names() -> list:
    return list(METHODS.keys())


# 装饰器，通过名称注册批量增强函数到METHODS字典中
def register_method(name):
    def decorator(func):
        METHODS[name] = func
        return func

    return decorator


@dataclass
class MixedBatch:
    """增强后的一个批次，loss = lam*CE(labels_a) + (1-lam)*CE(labels_b)"""
    images: torch.Tensor
    labels_a: torch.Tensor
    labels_b: torch.Tensor
    lam: torch.Tensor


def describe_regime(name: str) -> List[str]:
    """返回某个训练方案依次施加的变换，用于配置自检"""
    get_method(name)
    steps = list(BASE_TRANSFORMS)
    if name != "baseline":
        steps.append(name)
    return steps


def base_transform(images: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """传统增强：随机水平翻转 + 填充4像素后随机裁剪"""
    _, _, height, width = images.shape
    output = []
    for image in images:
        if rng.random() < 0.5:
            image = TF.horizontal_flip(image)
        padded = TF.pad(image, [CROP_PADDING], fill=0.0)
        top = int(rng.integers(0, 2 * CROP_PADDING + 1))
        left = int(rng.integers(0, 2 * CROP_PADDING + 1))
        output.append(TF.crop(padded, top, left, height, width))
    return torch.stack(output)


def _pairwise(images: torch.Tensor, labels: torch.Tensor, rng: np.random.Generator,
              mix: Callable) -> MixedBatch:
    # 每个样本与一个随机置换后的伙伴配对（不放回）
    partner = rng.permutation(len(images))
    mixed, labels_b, lam = [], [], []
    for i, j in enumerate(partner):
        outcome = mix(images[i], images[j], int(labels[i]), int(labels[j]))
        mixed.append(outcome.image)
        labels_b.append(outcome.label_b if outcome.label_b is not None else outcome.label_a)
        lam.append(outcome.mix_weight)
    return MixedBatch(images=torch.stack(mixed), labels_a=labels.clone(),
                      labels_b=torch.tensor(labels_b, dtype=labels.dtype),
                      lam=torch.tensor(lam, dtype=torch.float32))


def _identity(images: torch.Tensor, labels: torch.Tensor) -> MixedBatch:
    return MixedBatch(images=images, labels_a=labels.clone(), labels_b=labels.clone(),
                      lam=torch.ones(len(images), dtype=torch.float32))


@register_method("baseline")
def baseline_batch(images, labels, config: ExperimentConfig, rng) -> MixedBatch:
    return _identity(images, labels)


@register_method("cutout")
def cutout_batch(images, labels, config: ExperimentConfig, rng) -> MixedBatch:
    output = torch.stack([cutout(image, config.cutout_side, rng).image for image in images])
    return _identity(output, labels)


@register_method("mixup")
def mixup_batch(images, labels, config: ExperimentConfig, rng) -> MixedBatch:
    return _pairwise(images, labels, rng,
                     lambda a, b, la, lb: mixup(a, b, la, lb, config.mixup_alpha, rng))


@register_method("cutmix")
def cutmix_batch(images, labels, config: ExperimentConfig, rng) -> MixedBatch:
    return _pairwise(images, labels, rng,
                     lambda a, b, la, lb: cutmix(a, b, la, lb, config.cutmix_alpha, rng))


@register_method("saliencymix")
def saliencymix_batch(images, labels, config: ExperimentConfig, rng) -> MixedBatch:
    return _pairwise(images, labels, rng,
                     lambda a, b, la, lb: saliencymix(a, b, la, lb, config.saliencymix_alpha, rng))


def augment_batch(name: str, images: torch.Tensor, labels: torch.Tensor,
                  config: ExperimentConfig, rng: np.random.Generator) -> MixedBatch:
    """
    对一个批次施加训练方案 name：先做传统增强，再按 augment_prob 的概率做混合增强

    Args:
        name: baseline / cutout / mixup / cutmix / saliencymix
        images: (B,C,H,W)
        labels: (B,)
    """
    method = get_method(name)
    images = base_transform(images, rng)
    if name != "baseline" and rng.random() >= config.augment_prob:
        return _identity(images, labels)
    return method(images, labels, config, rng)
