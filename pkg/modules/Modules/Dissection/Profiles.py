from dataclasses import dataclass
from typing import Iterator, List, Literal, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from modules.Modules.Dissection.ConceptCorpus import ConceptCorpus
from modules.Modules.Harness.Network import resolve_layer
from modules.utils.Errors import InvalidArgument
from modules.utils.logger import get_logger

logger = get_logger("Profiles")

TOP_QUANTILE = 0.99


@dataclass
class UnitActivationProfile:
    """单元 k 的激活阈值 T_k，满足 P(a_k > T_k) = 0.01"""
    unit: int
    threshold: float
    count: int
    degenerate: bool = False


class _Capture:
    def __init__(self):
        self.output = None

    def __call__(self, module, inputs, output):
        self.output = output


@torch.no_grad()
def unit_activations(model: nn.Module, layer: Union[str, nn.Module, None], images: np.ndarray,
                     upsample: bool = True, batch_size: int = 64) -> Iterator[torch.Tensor]:
    """
    分批产出层激活 (B,U,h,w)，upsample 时双线性上采样到输入分辨率
    """
    model.eval()
    module = resolve_layer(model, layer)
    capture = _Capture()
    handle = module.register_forward_hook(capture)
    try:
        for start in range(0, len(images), batch_size):
            batch = torch.as_tensor(images[start:start + batch_size], dtype=torch.float32)
            model(batch)
            activation = capture.output.detach().float()
            if upsample and activation.shape[-2:] != batch.shape[-2:]:
                activation = F.interpolate(activation, size=batch.shape[-2:], mode="bilinear", align_corners=False)
            yield activation
    finally:
        handle.remove()


def profiles_from_activations(activations: np.ndarray, quantile: float = TOP_QUANTILE) -> List[UnitActivationProfile]:
    """
    activations: (U, M)，每个单元的全部激活值
    阈值取经验分位数；没有任何激活严格大于阈值的单元标记为退化
    """
    if activations.ndim != 2 or activations.shape[1] == 0:
        raise InvalidArgument(f"需要 (U,M) 的非空激活，得到 {activations.shape}")
    thresholds = np.quantile(activations, quantile, axis=1)
    maxima = activations.max(axis=1)
    profiles = [UnitActivationProfile(unit=k, threshold=float(t), count=activations.shape[1], degenerate=bool(m <= t))
                for k, (t, m) in enumerate(zip(thresholds, maxima))]
    degenerate = [p.unit for p in profiles if p.degenerate]
    if degenerate:
        logger.warning(f"[Dissect] {len(degenerate)} 个单元退化（没有激活超过阈值）: {degenerate[:10]}")
    return profiles


def collect_profiles(model: nn.Module, layer: Union[str, nn.Module, None], corpus: ConceptCorpus,
                     resolution: Literal["input", "feature"] = "input",
                     quantile: float = TOP_QUANTILE) -> List[UnitActivationProfile]:
    """
    在整个语料上求每个单元的 top 1% 阈值，保留全部激活求精确分位数

    Args:
        layer: 探测的层，默认最后的卷积层
        resolution: input 在上采样后的激活上求分位数，feature 在原始特征分辨率上求
    """
    if len(corpus) == 0:
        raise InvalidArgument("语料为空")
    chunks = [a.permute(1, 0, 2, 3).reshape(a.shape[1], -1).numpy()
              for a in unit_activations(model, layer, corpus.images, upsample=resolution == "input")]
    return profiles_from_activations(np.concatenate(chunks, axis=1), quantile)
