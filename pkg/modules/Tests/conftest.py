import numpy as np
import pytest
import torch
import torch.nn as nn
from ruamel.yaml import YAML

from modules.Modules.BaseConfig import ExperimentConfig
from modules.Modules.Dissection.ConceptCorpus import ConceptCorpus
from modules.Modules.Harness.SceneGenerator import concept_table
from modules.Tests.Doubles import CamToyNet, ColorUnit

# 端到端测试用的小配置：16x16 图像、每个阶段一个残差块、一轮训练
TINY_CONFIG = dict(
    image_size=16, train_size=60, val_size=60, depth=8, widths=[4, 8, 16],
    epochs=1, batch_size=32, cutout_side=8,
    iba_steps=2, iba_samples=2, calibration_size=8,
    eval_samples=4, score_threshold=0.0,
    ehr_thresholds=10, n_orders=2, corpus_size=8, workers=2, score_batch=64,
)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config(tmp_path) -> ExperimentConfig:
    return ExperimentConfig(output_dir=str(tmp_path / "out"), **TINY_CONFIG)


@pytest.fixture
def tiny_config_file(tmp_path):
    """写成 YAML 的小配置，供命令行测试使用"""
    path = tmp_path / "tiny.yaml"
    yaml = YAML()
    with open(path, "w", encoding="utf-8") as f:
        yaml.dump(dict(TINY_CONFIG, output_dir=str(tmp_path / "out")), f)
    return str(path)


@pytest.fixture
def cam_toy_net():
    torch.manual_seed(0)
    return CamToyNet(torch.tensor([[1.5, -0.5], [-1.0, 2.0]])).eval()


@pytest.fixture
def planted_corpus() -> ConceptCorpus:
    """
    100 张 32x32 的纯灰图，60 张放红色 4x4 方块，40 张放绿色方块
    红色像素占比约 0.94%，保证 1% 分位数落在背景和红色之间
    """
    table = concept_table()
    index = {(c.category, c.name): c.id for c in table}
    count, size = 100, 32
    images = np.full((count, 3, size, size), 0.5, dtype=np.float32)
    masks = np.zeros((count, len(table), size, size), dtype=bool)
    gen = np.random.default_rng(7)
    for i in range(count):
        y, x = gen.integers(0, size - 4, size=2)
        square = np.zeros((size, size), dtype=bool)
        square[y:y + 4, x:x + 4] = True
        color = "red" if i < 60 else "green"
        images[i][:, square] = np.asarray((0.85, 0.12, 0.12) if color == "red" else (0.15, 0.70, 0.20),
                                          dtype=np.float32)[:, None]
        masks[i, index[("color", color)]] = square
        masks[i, index[("object", "square")]] = square
        masks[i, index[("color", "gray")]] = ~square
        masks[i, index[("material", "grain")]] = ~square
    return ConceptCorpus(images=images, masks=masks, concepts=table)


@pytest.fixture
def color_unit():
    return nn.Sequential(ColorUnit()).eval()
