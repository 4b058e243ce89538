import os
from dataclasses import dataclass
from typing import List

import numpy as np
from ruamel.yaml import YAML

from modules.Modules.Harness.SceneGenerator import CATEGORIES, Concept, concept_table, render_scene
from modules.utils.Errors import InvalidArgument, MissingArtifact
from modules.utils.TensorFile import read_tensor, write_tensor
from modules.utils.logger import get_logger

logger = get_logger("ConceptCorpus")

# 语料场景中物体数量和半径范围
OBJECTS_PER_SCENE = (1, 3)
CORPUS_RADIUS = (0.12, 0.3)
CORPUS_STREAM = 2


@dataclass
class ConceptCorpus:
    """
    概念语料：images (N,C,H,W)，masks (N,K,H,W) 布尔，第 k 个掩码对应 concepts[k]
    """
    images: np.ndarray
    masks: np.ndarray
    concepts: List[Concept]

    def __post_init__(self):
        self.masks = np.asarray(self.masks).astype(bool)
        if self.images.ndim != 4 or self.masks.ndim != 4:
            raise InvalidArgument(f"语料形状非法: images {self.images.shape}, masks {self.masks.shape}")
        n, _, h, w = self.images.shape
        if self.masks.shape != (n, len(self.concepts), h, w):
            raise InvalidArgument(f"掩码形状 {self.masks.shape} 与图像 {self.images.shape} 和 {len(self.concepts)} 个概念不符")
        for i, concept in enumerate(self.concepts):
            if concept.id != i:
                raise InvalidArgument(f"概念表 id 必须连续，第 {i} 个是 {concept.id}")
            if concept.category not in CATEGORIES:
                raise InvalidArgument(f"未知的概念类别 {concept.category}")

    def __len__(self):
        return len(self.images)

    def concept(self, concept_id: int) -> Concept:
        if not 0 <= concept_id < len(self.concepts):
            raise InvalidArgument(f"概念 {concept_id} 不在概念表中")
        return self.concepts[concept_id]

    def save(self, directory: str) -> None:
        """图像一个张量文件，每个出现的 (图像, 概念) 一个掩码文件，概念表为 YAML"""
        os.makedirs(os.path.join(directory, "masks"), exist_ok=True)
        n, _, h, w = self.images.shape
        write_tensor(os.path.join(directory, "images.tensor"), self.images, {"count": n})
        for i in range(n):
            for k in np.flatnonzero(self.masks[i].any(axis=(1, 2))):
                write_tensor(os.path.join(directory, "masks", f"{i:05d}_{k:02d}.tensor"),
                             self.masks[i, k].astype(np.float32),
                             {"height": h, "width": w, "image": i, "concept": int(k)})
        yaml = YAML()
        with open(os.path.join(directory, "concepts.yaml"), "w", encoding="utf-8") as f:
            yaml.dump({"concepts": [{"id": c.id, "name": c.name, "category": c.category} for c in self.concepts]}, f)
        logger.info(f"[Corpus] 已保存 {n} 张图像到 {directory}")

    @classmethod
    def load(cls, directory: str) -> "ConceptCorpus":
        table_path = os.path.join(directory, "concepts.yaml")
        if not os.path.exists(table_path):
            raise MissingArtifact(f"语料不存在: {directory}")
        with open(table_path, "r", encoding="utf-8") as f:
            table = YAML(typ="safe").load(f)
        concepts = [Concept(id=int(c["id"]), name=c["name"], category=c["category"]) for c in table["concepts"]]
        images, _ = read_tensor(os.path.join(directory, "images.tensor"))
        n, _, h, w = images.shape
        masks = np.zeros((n, len(concepts), h, w), dtype=bool)
        mask_dir = os.path.join(directory, "masks")
        for name in sorted(os.listdir(mask_dir)):
            values, header = read_tensor(os.path.join(mask_dir, name))
            masks[header["image"], header["concept"]] = values > 0.5
        return cls(images=images, masks=masks, concepts=concepts)


def generate_concept_corpus(size: int, count: int, seed: int) -> ConceptCorpus:
    """
    程序化生成概念语料：纹理背景上 1~3 个纯色形状
    object 为形状，part 为边缘/内部，material 为背景纹理，color 为物体颜色或背景灰色

    Args:
        size: 图像边长
        count: 图像数
        seed: 随机种子，相同种子得到相同语料
    """
    if size < 8 or count < 1:
        raise InvalidArgument(f"非法的语料参数 size={size} count={count}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, CORPUS_STREAM]))
    table = concept_table()
    images = np.empty((count, 3, size, size), dtype=np.float32)
    masks = np.zeros((count, len(table), size, size), dtype=bool)
    for i in range(count):
        n_objects = int(rng.integers(OBJECTS_PER_SCENE[0], OBJECTS_PER_SCENE[1] + 1))
        scene = render_scene(size, n_objects, CORPUS_RADIUS, rng)
        images[i] = scene.image
        masks[i] = scene.concept_masks(table)
    corpus = ConceptCorpus(images=images, masks=masks, concepts=table)
    logger.info(f"[Corpus] 生成 {count} 张 {size}x{size} 图像，{len(table)} 个概念")
    return corpus
