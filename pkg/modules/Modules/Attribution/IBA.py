from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from modules.Modules.Attribution.AttributionMap import AttributionMap, normalize
from modules.Modules.Harness.Network import resolve_layer
from modules.utils.Errors import AttributionFailure, InvalidArgument
from modules.utils.logger import get_logger

logger = get_logger("IBA")

STD_FLOOR = 1e-6


@dataclass
class FeatureStats:
    """瓶颈层逐通道的均值和标准差"""
    mean: np.ndarray
    std: np.ndarray
    count: int
    layer: Optional[str] = None
    degenerate: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.count <= 0:
            raise InvalidArgument("FeatureStats 的样本数必须为正")
        if np.any(self.std < 0):
            raise InvalidArgument("标准差不能为负")


class _Capture:
    def __init__(self):
        self.output = None

    def __call__(self, module, inputs, output):
        self.output = output


@torch.no_grad()
def iba_fit_statistics(model: nn.Module, layer: Union[str, nn.Module], calibration_images: np.ndarray,
                       min_images: int = 100, batch_size: int = 64) -> FeatureStats:
    """
    在校准集上估计瓶颈层逐通道的均值和标准差（跨图像和空间位置）

    Args:
        model: 推理模式的网络
        layer: 瓶颈层名称
        calibration_images: (N,C,H,W)
        min_images: 最少校准图像数
    """
    if calibration_images is None or len(calibration_images) == 0:
        raise InvalidArgument("校准集为空")
    if len(calibration_images) < min_images:
        raise InvalidArgument(f"校准集只有 {len(calibration_images)} 张，至少需要 {min_images} 张")
    model.eval()
    module = resolve_layer(model, layer)
    capture = _Capture()
    handle = module.register_forward_hook(capture)
    total, total_sq, count = None, None, 0
    try:
        for start in range(0, len(calibration_images), batch_size):
            batch = torch.as_tensor(calibration_images[start:start + batch_size], dtype=torch.float32)
            model(batch)
            feature = capture.output.double()
            channel_sum = feature.sum(dim=(0, 2, 3))
            channel_sq = (feature ** 2).sum(dim=(0, 2, 3))
            total = channel_sum if total is None else total + channel_sum
            total_sq = channel_sq if total_sq is None else total_sq + channel_sq
            count += feature.shape[0] * feature.shape[2] * feature.shape[3]
    finally:
        handle.remove()
    mean = (total / count).numpy()
    var = np.maximum((total_sq / count).numpy() - mean ** 2, 0.0)
    std = np.sqrt(var)
    degenerate = tuple(int(i) for i in np.flatnonzero(std < STD_FLOOR))
    if degenerate:
        logger.warning(f"[IBA] {len(degenerate)} 个通道的标准差为0，已截断到 {STD_FLOOR}")
        std = np.maximum(std, STD_FLOOR)
    layer_name = layer if isinstance(layer, str) else None
    logger.info(f"[IBA] 层 {layer_name} 的统计量来自 {len(calibration_images)} 张图像")
    return FeatureStats(mean=mean.astype(np.float32), std=std.astype(np.float32), count=count,
                        layer=layer_name, degenerate=degenerate)


class InformationBottleneck:
    """
    在瓶颈层插入逐位置掩码 m = sigmoid(alpha)：
        Z = m*f + (1-m)*(mu + sigma*eps)
    最小化 CE(target) + beta * mean(KL(Z|f || N(mu, sigma^2)))
    标准化后 Z~ | f ~ N(m*f~, (1-m)^2)，KL = -log(1-m) + ((1-m)^2 + (m*f~)^2 - 1) / 2
    """

    def __init__(self, model: nn.Module, layer: Union[str, nn.Module], stats: FeatureStats,
                 beta: float = 10.0, steps: int = 10, lr: float = 1.0, samples: int = 10,
                 init_alpha: float = 5.0):
        if beta <= 0:
            raise InvalidArgument(f"beta 必须为正，得到 {beta}")
        if steps < 1 or samples < 1:
            raise InvalidArgument("steps 和 samples 至少为1")
        if isinstance(layer, str) and stats.layer is not None and stats.layer != layer:
            raise InvalidArgument(f"统计量来自层 {stats.layer}，但瓶颈插在 {layer}")
        self.model = model.eval()
        self.layer = resolve_layer(model, layer)
        self.stats = stats
        self.beta = beta
        self.steps = steps
        self.lr = lr
        self.samples = samples
        self.init_alpha = init_alpha

        self._alpha: Optional[torch.Tensor] = None
        self._noise: Optional[torch.Tensor] = None

    def _replace(self, module, inputs, output):
        if self._alpha is None:
            return output
        mean = torch.as_tensor(self.stats.mean, dtype=output.dtype).view(1, -1, 1, 1)
        std = torch.as_tensor(self.stats.std, dtype=output.dtype).view(1, -1, 1, 1)
        mask = torch.sigmoid(self._alpha)
        return mask * output + (1 - mask) * (mean + std * self._noise)

    def _kl(self, feature: torch.Tensor) -> torch.Tensor:
        """逐元素 KL，feature 为未加噪的特征 (1,C,h,w)"""
        mean = torch.as_tensor(self.stats.mean, dtype=feature.dtype).view(1, -1, 1, 1)
        std = torch.as_tensor(self.stats.std, dtype=feature.dtype).view(1, -1, 1, 1)
        standardized = (feature - mean) / std
        mask = torch.sigmoid(self._alpha)
        # -log(1-m) = softplus(alpha)
        return F.softplus(self._alpha) + 0.5 * ((1 - mask) ** 2 + (mask * standardized) ** 2 - 1)

    def fit_mask(self, image: Union[np.ndarray, torch.Tensor], target_class: int,
                 rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """
        优化掩码

        Returns:
            (mask, capacity)，都是瓶颈分辨率 (h,w)；capacity 为各通道 KL 之和
        """
        x = torch.as_tensor(image, dtype=torch.float32)
        if x.ndim != 3:
            raise InvalidArgument(f"需要 (C,H,W) 图像，得到 {tuple(x.shape)}")
        x = x[None]
        generator = torch.Generator().manual_seed(int(rng.integers(2 ** 62)))

        capture = _Capture()
        handle = self.layer.register_forward_hook(capture)
        try:
            with torch.no_grad():
                logits = self.model(x)
            feature = capture.output.detach()
        finally:
            handle.remove()
        if not 0 <= int(target_class) < logits.shape[1]:
            raise InvalidArgument(f"类别 {target_class} 超出范围 [0,{logits.shape[1]})")
        if feature.shape[1] != len(self.stats.mean):
            raise InvalidArgument(f"统计量有 {len(self.stats.mean)} 个通道，瓶颈层有 {feature.shape[1]} 个")

        _, _, h, w = feature.shape
        self._alpha = torch.full((1, 1, h, w), self.init_alpha, dtype=torch.float32, requires_grad=True)
        optimizer = torch.optim.Adam([self._alpha], lr=self.lr)
        batch = x.expand(self.samples, -1, -1, -1)
        target = torch.full((self.samples,), int(target_class), dtype=torch.long)

        handle = self.layer.register_forward_hook(self._replace)
        try:
            for step in range(self.steps):
                self._noise = torch.randn((self.samples,) + tuple(feature.shape[1:]), generator=generator)
                with torch.enable_grad():
                    loss = F.cross_entropy(self.model(batch), target) + self.beta * self._kl(feature).mean()
                    if not torch.isfinite(loss):
                        raise AttributionFailure(f"IBA 第 {step} 步 loss 非有限: {loss.item()}")
                    # 只更新掩码参数
                    grad, = torch.autograd.grad(loss, self._alpha)
                optimizer.zero_grad()
                self._alpha.grad = grad
                optimizer.step()
            with torch.no_grad():
                capacity = self._kl(feature).sum(dim=1)[0]
                mask = torch.sigmoid(self._alpha)[0, 0]
        finally:
            handle.remove()
            self._alpha = None
            self._noise = None
        return mask.numpy().copy(), capacity.clamp_min(0).numpy().copy()


def iba(model: nn.Module, image: Union[np.ndarray, torch.Tensor], target_class: int, beta: float,
        steps: int, stats: FeatureStats, rng: np.random.Generator, layer: Union[str, nn.Module] = "stage2",
        lr: float = 1.0, samples: int = 10) -> AttributionMap:
    """IBA 归因图：瓶颈层的逐位置信息量，双线性上采样到输入分辨率后归一化"""
    bottleneck = InformationBottleneck(model, layer, stats, beta=beta, steps=steps, lr=lr, samples=samples)
    _, capacity = bottleneck.fit_mask(image, target_class, rng)
    height, width = tuple(image.shape[-2:])
    upsampled = F.interpolate(torch.from_numpy(capacity)[None, None], size=(height, width),
                              mode="bilinear", align_corners=False)[0, 0].clamp_min(0)
    return AttributionMap(values=normalize(upsampled.numpy()), target_class=int(target_class),
                          method="iba", normalized=True)
