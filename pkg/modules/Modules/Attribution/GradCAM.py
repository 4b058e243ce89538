from typing import Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from modules.Modules.Attribution.AttributionMap import AttributionMap, normalize
from modules.Modules.Harness.Network import resolve_layer
from modules.utils.Errors import InvalidArgument


class CamExtractor:
    """在目标层挂前向钩子，记录特征图"""

    def __init__(self, model: nn.Module, target_layer: nn.Module):
        self.model = model
        self.target_layer = target_layer
        self.activations = None

    def _hook(self, module, inputs, output):
        self.activations = output

    def forward_pass(self, x: torch.Tensor):
        handle = self.target_layer.register_forward_hook(self._hook)
        try:
            logits = self.model(x)
        finally:
            handle.remove()
        return self.activations, logits


def gradcam(model: nn.Module, image: Union[np.ndarray, torch.Tensor], target_class: int,
            layer: Union[str, nn.Module, None] = None) -> AttributionMap:
    """
    GradCAM 归因图

    1. 前向得到目标层特征图 A 和 logits
    2. 目标类 logit 对 A 求梯度，逐通道的空间均值作为权重
    3. ReLU(sum_k w_k A_k)，双线性上采样到输入分辨率后 min-max 归一化

    Args:
        model: 推理模式的网络
        image: (C,H,W)
        target_class: 目标类别
        layer: 目标层名称，默认最后的卷积层
    """
    model.eval()
    x = torch.as_tensor(image, dtype=torch.float32)
    if x.ndim != 3:
        raise InvalidArgument(f"需要 (C,H,W) 图像，得到 {tuple(x.shape)}")
    x = x[None]
    extractor = CamExtractor(model, resolve_layer(model, layer))
    with torch.enable_grad():
        activations, logits = extractor.forward_pass(x)
        if not 0 <= int(target_class) < logits.shape[1]:
            raise InvalidArgument(f"类别 {target_class} 超出范围 [0,{logits.shape[1]})")
        # 只对特征图求导，不动参数上的 .grad
        gradients = torch.autograd.grad(logits[0, int(target_class)], activations)[0]
    weights = gradients.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * activations).sum(dim=1, keepdim=True)).detach()
    cam = F.interpolate(cam, size=x.shape[-2:], mode="bilinear", align_corners=False)
    values = normalize(cam[0, 0].clamp_min(0).numpy())
    return AttributionMap(values=values, target_class=int(target_class), method="gradcam", normalized=True)
