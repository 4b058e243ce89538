import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from modules.Modules.BaseConfig import ExperimentConfig
from modules.Modules.Harness.SceneGenerator import SHAPES, render_scene
from modules.utils.Errors import InvalidArgument, MissingArtifact
from modules.utils.logger import get_logger

logger = get_logger("Dataset")

Box = Tuple[int, int, int, int]

# 分类场景中物体半径相对边长的范围，外接框面积约占 16%~46%
OBJECT_RADIUS = (0.2, 0.34)

# SeedSequence 的子流编号
TRAIN_STREAM, VAL_STREAM = 0, 1


@dataclass
class LabeledSet:
    """带框标注的图像集合，图像为 (N,C,H,W) 的 [0,1] 浮点"""
    images: np.ndarray
    labels: np.ndarray
    boxes: List[List[Box]]

    def __len__(self):
        return len(self.labels)

    def channel_mean(self) -> np.ndarray:
        """逐通道均值像素，删除/插入曲线的默认填充值"""
        return self.images.mean(axis=(0, 2, 3)).astype(np.float32)

    def subset(self, indices) -> "LabeledSet":
        indices = list(indices)
        return LabeledSet(images=self.images[indices], labels=self.labels[indices],
                          boxes=[self.boxes[i] for i in indices])


def make_synthetic_set(size: int, count: int, seed: int, stream: int) -> LabeledSet:
    """
    单物体场景：纹理背景上一个纯色形状，标签为形状类别，框为物体的外接矩形

    Args:
        size: 图像边长
        count: 样本数
        seed: 实验种子
        stream: 子流编号，区分训练集和验证集
    """
    if count < 1:
        raise InvalidArgument(f"样本数必须为正，得到 {count}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, stream]))
    labels = np.arange(count) % len(SHAPES)
    rng.shuffle(labels)
    images = np.empty((count, 3, size, size), dtype=np.float32)
    boxes = []
    for i, label in enumerate(labels):
        scene = render_scene(size, 1, OBJECT_RADIUS, rng, shapes=[int(label)])
        images[i] = scene.image
        boxes.append([scene.objects[0].box()])
    return LabeledSet(images=images, labels=labels.astype(np.int64), boxes=boxes)


def load_npz_set(path: str) -> LabeledSet:
    """
    读取 npz 数据集：images (N,C,H,W) 浮点、labels (N,)、boxes (N,4) 或 (N,K,4)
    (N,K,4) 中 x1<=x0 的行视为填充
    """
    if not os.path.exists(path):
        raise MissingArtifact(f"数据集不存在: {path}")
    with np.load(path) as data:
        missing = {"images", "labels", "boxes"} - set(data.files)
        if missing:
            raise InvalidArgument(f"{path} 缺少字段 {sorted(missing)}")
        images = np.asarray(data["images"], dtype=np.float32)
        labels = np.asarray(data["labels"], dtype=np.int64)
        raw_boxes = np.asarray(data["boxes"], dtype=np.int64)
    if images.ndim != 4 or len(images) != len(labels) or len(raw_boxes) != len(labels):
        raise InvalidArgument(f"{path} 字段形状不一致: images {images.shape}, labels {labels.shape}, boxes {raw_boxes.shape}")
    if images.min() < 0 or images.max() > 1:
        raise InvalidArgument(f"{path} 图像取值必须在 [0,1] 内")
    if raw_boxes.ndim == 2:
        raw_boxes = raw_boxes[:, None, :]
    boxes = [[tuple(int(v) for v in b) for b in row if b[2] > b[0] and b[3] > b[1]] for row in raw_boxes]
    return LabeledSet(images=images, labels=labels, boxes=boxes)


def load_datasets(config: ExperimentConfig) -> Tuple[LabeledSet, LabeledSet]:
    """返回 (训练集, 验证集)，验证集用于样本筛选和评估"""
    if config.dataset_kind == "npz":
        full = load_npz_set(config.dataset_path)
        if full.images.shape[-1] != config.image_size or full.images.shape[-2] != config.image_size:
            raise InvalidArgument(f"数据集分辨率 {full.images.shape[-2:]} 与 image_size={config.image_size} 不符")
        if full.labels.max() >= config.num_classes:
            raise InvalidArgument(f"标签超出 num_classes={config.num_classes}")
        split = max(1, len(full) - config.val_size)
        train, val = full.subset(range(split)), full.subset(range(split, len(full)))
    else:
        if config.num_classes != len(SHAPES):
            raise InvalidArgument(f"合成数据集只有 {len(SHAPES)} 个类别，num_classes={config.num_classes}")
        train = make_synthetic_set(config.image_size, config.train_size, config.seed, TRAIN_STREAM)
        val = make_synthetic_set(config.image_size, config.val_size, config.seed, VAL_STREAM)
    logger.info(f"[Dataset] {config.dataset_kind}: 训练 {len(train)}，验证 {len(val)}")
    return train, val
