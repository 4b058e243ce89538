from typing import Protocol, Union

import numpy as np
import torch
import torch.nn as nn

from modules.Modules.Harness.Trainer import ModelCheckpoint
from modules.utils.Errors import InvalidArgument

ArrayLike = Union[np.ndarray, torch.Tensor]


class Scorer(Protocol):
    """忠实度引擎需要的打分接口"""

    def score(self, images: ArrayLike, target_class: int) -> np.ndarray: ...

    def predict(self, image: ArrayLike) -> int: ...


class ScoreOracle:
    """
    推理模式下的批量打分器，返回目标类的 softmax 概率
    只读，多个线程可以共用同一个实例
    """

    def __init__(self, model: nn.Module, batch_size: int = 256, image_size: int = None):
        self.model = model.eval()
        self.batch_size = batch_size
        self.image_size = image_size
        self.num_classes = getattr(getattr(model, "arch", None), "num_classes", None)

    @classmethod
    def from_checkpoint(cls, checkpoint: ModelCheckpoint, batch_size: int = 256, image_size: int = None) -> "ScoreOracle":
        return cls(checkpoint.model(), batch_size=batch_size, image_size=image_size)

    def _as_batch(self, images: ArrayLike) -> torch.Tensor:
        tensor = torch.as_tensor(images, dtype=torch.float32)
        if tensor.ndim == 3:
            tensor = tensor[None]
        if tensor.ndim != 4:
            raise InvalidArgument(f"需要 (B,C,H,W) 图像，得到 {tuple(tensor.shape)}")
        if self.image_size is not None and tuple(tensor.shape[-2:]) != (self.image_size, self.image_size):
            raise InvalidArgument(f"图像分辨率 {tuple(tensor.shape[-2:])} 与训练分辨率 {self.image_size} 不符")
        return tensor

    @torch.no_grad()
    def probabilities(self, images: ArrayLike) -> np.ndarray:
        """(B,K) 的 softmax 概率"""
        batch = self._as_batch(images)
        outputs = []
        for start in range(0, len(batch), self.batch_size):
            logits = self.model(batch[start:start + self.batch_size])
            outputs.append(torch.softmax(logits.double(), dim=1))
        return torch.cat(outputs).numpy()

    def score(self, images: ArrayLike, target_class: int) -> np.ndarray:
        probs = self.probabilities(images)
        if not 0 <= int(target_class) < probs.shape[1]:
            raise InvalidArgument(f"类别 {target_class} 超出范围 [0,{probs.shape[1]})")
        return probs[:, int(target_class)]

    def predict(self, image: ArrayLike) -> int:
        return int(np.argmax(self.probabilities(image)[0]))


def score_oracle(checkpoint: ModelCheckpoint, images: ArrayLike, target_class: int,
                 batch_size: int = 256) -> np.ndarray:
    """检查点对一批图像的目标类概率"""
    return ScoreOracle.from_checkpoint(checkpoint, batch_size=batch_size).score(images, target_class)
