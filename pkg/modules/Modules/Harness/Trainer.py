import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from modules.Modules.Augment.BatchMixer import MixedBatch, augment_batch
from modules.Modules.BaseConfig import AUGMENTATIONS, ExperimentConfig
from modules.Modules.Harness.Dataset import LabeledSet
from modules.Modules.Harness.Network import ArchConfig, ResNet, build_model
from modules.utils.Errors import InvalidArgument, MissingArtifact, TrainingFailure
from modules.utils.RecordStore import JsonlStore
from modules.utils.logger import get_logger

logger = get_logger("Trainer")

# 训练随机流，与数据集的子流编号错开
AUGMENT_STREAM = 5


@dataclass
class ModelCheckpoint:
    """结构描述 + 参数 + 训练元数据"""
    arch: ArchConfig
    state_dict: Dict[str, torch.Tensor]
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def augmentation(self) -> str:
        return self.metadata.get("augmentation", "")

    def model(self) -> ResNet:
        """重建网络并切到推理模式"""
        model = build_model(self.arch)
        model.load_state_dict(self.state_dict)
        return model.eval()

    def save(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        torch.save({
            "descriptor": self.arch.model_dump_json(),
            "metadata": self.metadata,
            "state_dict": self.state_dict,
        }, path)
        logger.info(f"[Checkpoint] 已保存 {path}")

    @classmethod
    def load(cls, path: str) -> "ModelCheckpoint":
        if not os.path.exists(path):
            raise MissingArtifact(f"检查点不存在: {path}，请先运行 train")
        blob = torch.load(path, map_location="cpu", weights_only=True)
        return cls(arch=ArchConfig.model_validate_json(blob["descriptor"]),
                   state_dict=blob["state_dict"], metadata=dict(blob["metadata"]))


def set_determinism(seed: int) -> None:
    """固定随机种子并启用确定性算子"""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    torch.backends.cudnn.benchmark = False
    torch.backends.cudnn.deterministic = True


def mixed_loss(logits: torch.Tensor, batch: MixedBatch) -> torch.Tensor:
    """lam*CE(labels_a) + (1-lam)*CE(labels_b)，按样本加权后取平均"""
    loss_a = F.cross_entropy(logits, batch.labels_a, reduction="none")
    loss_b = F.cross_entropy(logits, batch.labels_b, reduction="none")
    lam = batch.lam.to(logits.dtype)
    return (lam * loss_a + (1 - lam) * loss_b).mean()


@torch.no_grad()
def evaluate_accuracy(model: nn.Module, dataset: LabeledSet, batch_size: int = 256) -> float:
    model.eval()
    correct = 0
    for start in range(0, len(dataset), batch_size):
        images = torch.from_numpy(dataset.images[start:start + batch_size])
        labels = torch.from_numpy(dataset.labels[start:start + batch_size])
        correct += int((model(images).argmax(dim=1) == labels).sum())
    return correct / max(1, len(dataset))


def train(model: ResNet, dataset: LabeledSet, augmentation: str, config: ExperimentConfig,
          seed: int, eval_set: Optional[LabeledSet] = None, log_path: Optional[str] = None,
          checkpoint_path: Optional[str] = None) -> ModelCheckpoint:
    """
    在 augmentation 方案下训练模型

    Args:
        model: build_model 得到的网络
        dataset: 训练集
        augmentation: baseline / cutout / mixup / cutmix / saliencymix
        config: 超参数取自 epochs/batch_size/lr/momentum/weight_decay/lr_milestones/lr_gamma
        seed: 批次顺序和增强的随机种子
        eval_set: 计算最终 top-1 的数据，为空时用训练集
        log_path: 逐轮记录的 JSONL 文件
        checkpoint_path: 给定时保存检查点
    """
    if len(dataset) == 0:
        raise InvalidArgument("训练集为空")
    if augmentation not in AUGMENTATIONS:
        raise InvalidArgument(f"不支持的增强方式 {augmentation}")
    set_determinism(seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, AUGMENT_STREAM, AUGMENTATIONS.index(augmentation)]))
    log = JsonlStore(log_path) if log_path else None

    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=config.momentum,
                                weight_decay=config.weight_decay)
    milestones = sorted({max(1, int(round(m * config.epochs))) for m in config.lr_milestones})
    scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=milestones, gamma=config.lr_gamma)

    images_all = torch.from_numpy(dataset.images)
    labels_all = torch.from_numpy(dataset.labels)
    loss_value = float("nan")
    for epoch in range(config.epochs):
        model.train()
        start_time = time.time()
        order = rng.permutation(len(dataset))
        total_loss, total_correct, seen = 0.0, 0.0, 0
        for start in range(0, len(order), config.batch_size):
            index = torch.from_numpy(order[start:start + config.batch_size])
            batch = augment_batch(augmentation, images_all[index], labels_all[index], config, rng)
            logits = model(batch.images)
            loss = mixed_loss(logits, batch)
            if not torch.isfinite(loss):
                raise TrainingFailure(augmentation, epoch, f"loss={loss.item()}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            count = len(index)
            total_loss += loss.item() * count
            predicted = logits.argmax(dim=1)
            lam = batch.lam
            total_correct += float((lam * (predicted == batch.labels_a) + (1 - lam) * (predicted == batch.labels_b)).sum())
            seen += count
        scheduler.step()
        loss_value = total_loss / seen
        if not math.isfinite(loss_value):
            raise TrainingFailure(augmentation, epoch, "平均 loss 非有限")
        row = {"epoch": epoch, "augmentation": augmentation, "seed": seed, "loss": loss_value,
               "accuracy": total_correct / seen, "lr": optimizer.param_groups[0]["lr"],
               "seconds": round(time.time() - start_time, 3)}
        if log is not None:
            log.add_chunk(row)
        logger.info(f"[Train] {augmentation} s{seed} 第 {epoch + 1}/{config.epochs} 轮 loss={loss_value:.4f} acc={row['accuracy']:.4f}")

    top1 = evaluate_accuracy(model, eval_set if eval_set is not None else dataset)
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    checkpoint = ModelCheckpoint(arch=model.arch, state_dict=state, metadata={
        "augmentation": augmentation, "seed": seed, "epochs": config.epochs,
        "top1": top1, "final_loss": loss_value,
    })
    logger.info(f"[Train] {augmentation} s{seed} 完成，top-1 {top1:.4f}")
    if checkpoint_path:
        checkpoint.save(checkpoint_path)
    model.eval()
    return checkpoint
