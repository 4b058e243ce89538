from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

AUGMENTATIONS = ("baseline", "cutout", "mixup", "cutmix", "saliencymix")
METHODS = ("gradcam", "iba")


class ExperimentConfig(BaseModel):
    """
    扁平的实验配置，每个键的含义见 Configs/Sample.yaml
    未知键直接报错
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0

    # 数据
    dataset_kind: Literal["synthetic", "npz"] = "synthetic"
    dataset_path: Optional[str] = None
    image_size: int = Field(32, ge=8)
    num_classes: int = Field(6, ge=2)
    train_size: int = Field(3000, ge=1)
    val_size: int = Field(1200, ge=1)

    # 网络结构
    depth: int = Field(14, ge=8)
    widths: List[int] = [16, 32, 64]

    # 训练
    epochs: int = Field(40, ge=1)
    batch_size: int = Field(128, ge=1)
    lr: float = Field(0.1, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0)
    lr_milestones: List[float] = [0.5, 0.75]
    lr_gamma: float = Field(0.1, gt=0, le=1)

    # 增强
    augmentations: List[Literal["baseline", "cutout", "mixup", "cutmix", "saliencymix"]] = list(AUGMENTATIONS)
    augment_prob: float = Field(1.0, ge=0, le=1)
    cutout_side: int = Field(16, ge=1)
    mixup_alpha: float = Field(0.2, gt=0)
    cutmix_alpha: float = Field(1.0, gt=0)
    saliencymix_alpha: float = Field(1.0, gt=0)

    # 归因
    methods: List[Literal["gradcam", "iba"]] = list(METHODS)
    iba_beta: float = Field(10.0, gt=0)
    iba_steps: int = Field(10, ge=1)
    iba_lr: float = Field(1.0, gt=0)
    iba_samples: int = Field(10, ge=1)
    iba_layer: str = "stage2"
    calibration_size: int = Field(100, ge=1)

    # 样本筛选
    eval_samples: int = Field(200, ge=1)
    score_threshold: float = Field(0.6, ge=0, lt=1)
    box_area_min: float = Field(0.10, ge=0, lt=1)
    box_area_max: float = Field(0.50, gt=0, le=1)

    # 对齐指标
    ehr_thresholds: int = Field(100, ge=2)
    ehr_numerator: Literal["thresholded", "raw"] = "thresholded"
    wsol_threshold: float = Field(0.15, ge=0, lt=1)

    # 忠实度
    grid_mode: Literal["cells", "partition"] = "cells"
    cell_px: int = Field(4, ge=1)
    n_orders: int = Field(5, ge=1)
    fill: Literal["mean", "image_mean"] = "mean"
    curve_stride: int = Field(1, ge=1)

    # 网络解剖
    corpus_size: int = Field(200, ge=1)
    iou_threshold: float = Field(0.04, ge=0)
    detector_mode: Literal["best", "all"] = "best"
    quantile_resolution: Literal["input", "feature"] = "input"

    # 运行
    workers: int = Field(4, ge=1)
    score_batch: int = Field(256, ge=1)
    output_dir: str = "out"

    @model_validator(mode="after")
    def _check_ranges(self) -> "ExperimentConfig":
        if (self.depth - 2) % (2 * len(self.widths)) != 0:
            raise ValueError(f"depth={self.depth} 与 {len(self.widths)} 个阶段不匹配，需满足 (depth-2) % {2 * len(self.widths)} == 0")
        if any(w < 1 for w in self.widths):
            raise ValueError("widths 必须为正")
        if self.box_area_min >= self.box_area_max:
            raise ValueError("box_area_min 必须小于 box_area_max")
        # cells 模式允许末尾不完整的格子；partition 模式下 cell_px 是每边的格子数
        if self.cell_px > self.image_size:
            raise ValueError("cell_px 大于图像尺寸")
        if any(not 0 < m < 1 for m in self.lr_milestones):
            raise ValueError("lr_milestones 是训练轮数的比例，必须在 (0,1) 内")
        if self.dataset_kind == "npz" and not self.dataset_path:
            raise ValueError("dataset_kind=npz 需要 dataset_path")
        if self.cutout_side > self.image_size:
            raise ValueError("cutout_side 不能大于图像尺寸")
        return self
