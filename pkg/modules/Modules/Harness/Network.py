from typing import List, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from modules.utils.Errors import InvalidArgument


class ArchConfig(BaseModel):
    """残差网络结构描述，随检查点一起保存"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    depth: int = 14
    widths: List[int] = [16, 32, 64]
    num_classes: int = 6
    in_channels: int = 3

    @model_validator(mode="after")
    def _check(self) -> "ArchConfig":
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError(f"widths 非法: {self.widths}")
        if self.depth < 2 + 2 * len(self.widths) or (self.depth - 2) % (2 * len(self.widths)) != 0:
            raise ValueError(f"depth={self.depth} 与 {len(self.widths)} 个阶段不匹配")
        if self.num_classes < 2 or self.in_channels < 1:
            raise ValueError("num_classes 至少为2，in_channels 至少为1")
        return self

    @property
    def blocks_per_stage(self) -> int:
        return (self.depth - 2) // (2 * len(self.widths))

    @property
    def stage_names(self) -> List[str]:
        return [f"stage{i + 1}" for i in range(len(self.widths))]


class ResidualBlock(nn.Module):
    """两个3x3卷积加跳连，stride>1 时在第一个卷积下采样"""

    def __init__(self, in_channels, out_channels, stride=1):
        super().__init__()
        self.first_conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.second_conv = nn.Conv2d(out_channels, out_channels, kernel_size=3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)

        self.shortcut = nn.Sequential()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.first_conv(x)))
        out = self.bn2(self.second_conv(out))
        out = out + self.shortcut(x)
        return F.relu(out)


class ResNet(nn.Module):
    """
    CIFAR 风格的残差网络：3x3 stem -> stage1..stageN -> 全局平均池化 -> 线性层
    输出 logits，最后一个 stage 即最后的卷积层，可以按名称取到
    """

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        self.in_channels = arch.widths[0]
        self.conv1 = nn.Conv2d(arch.in_channels, arch.widths[0], kernel_size=3, stride=1, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(arch.widths[0])
        for i, (name, width) in enumerate(zip(arch.stage_names, arch.widths)):
            self.add_module(name, self._make_stage(width, arch.blocks_per_stage, 1 if i == 0 else 2))
        self.avg_pool = nn.AdaptiveAvgPool2d((1, 1))
        self.fc = nn.Linear(arch.widths[-1], arch.num_classes)

    def _make_stage(self, out_channels, num_blocks, first_block_stride):
        strides = [first_block_stride] + [1] * (num_blocks - 1)
        layers = []
        for stride in strides:
            layers.append(ResidualBlock(self.in_channels, out_channels, stride))
            self.in_channels = out_channels
        return nn.Sequential(*layers)

    @property
    def last_conv_name(self) -> str:
        return self.arch.stage_names[-1]

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        for name in self.arch.stage_names:
            out = getattr(self, name)(out)
        out = torch.flatten(self.avg_pool(out), 1)
        return self.fc(out)


def build_model(arch: Union[ArchConfig, dict], seed: int = None) -> ResNet:
    """
    按结构描述构建网络

    Args:
        arch: 结构描述
        seed: 给定时用它初始化参数，相同种子得到相同参数
    """
    try:
        arch = arch if isinstance(arch, ArchConfig) else ArchConfig(**arch)
    except ValidationError as e:
        raise InvalidArgument(f"非法的网络结构: {e}") from e
    if seed is not None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            return ResNet(arch)
    return ResNet(arch)


def resolve_layer(model: nn.Module, layer: Union[str, nn.Module, None]) -> nn.Module:
    """按名称取子模块，None 表示最后的卷积层"""
    if isinstance(layer, nn.Module):
        return layer
    if layer is None:
        layer = getattr(model, "last_conv_name", None)
        if layer is None:
            raise InvalidArgument("模型没有声明最后的卷积层，需要显式指定 layer")
    modules = dict(model.named_modules())
    if layer not in modules:
        raise InvalidArgument(f"模型中不存在层 {layer}")
    return modules[layer]
