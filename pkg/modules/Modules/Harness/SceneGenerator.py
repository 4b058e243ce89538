from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from modules.utils.Errors import InvalidArgument

# 物体形状即分类标签
SHAPES = ["square", "circle", "triangle", "diamond", "cross", "ring"]
PARTS = ["rim", "core"]
MATERIALS = ["stripes", "checker", "dots", "grain"]
PALETTE: Dict[str, Tuple[float, float, float]] = {
    "red": (0.85, 0.12, 0.12),
    "green": (0.15, 0.70, 0.20),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.90, 0.85, 0.15),
    "purple": (0.60, 0.20, 0.70),
}
OBJECT_COLORS = list(PALETTE.keys())
# 背景纹理都是灰度的
BACKGROUND_COLOR = "gray"
COLORS = OBJECT_COLORS + [BACKGROUND_COLOR]

CATEGORIES = ("object", "part", "material", "color")


@dataclass(frozen=True)
class Concept:
    id: int
    name: str
    category: str


def concept_table() -> List[Concept]:
    """合成语料的概念表，id 连续编号"""
    names = [(n, "object") for n in SHAPES] + [(n, "part") for n in PARTS] \
        + [(n, "material") for n in MATERIALS] + [(n, "color") for n in COLORS]
    return [Concept(id=i, name=n, category=c) for i, (n, c) in enumerate(names)]


@dataclass
class SceneObject:
    shape: int
    color: int
    mask: np.ndarray  # bool (H,W)，已扣除被遮挡的部分

    def box(self) -> Tuple[int, int, int, int]:
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


@dataclass
class Scene:
    image: np.ndarray  # float32 (3,H,W)
    material: int
    objects: List[SceneObject] = field(default_factory=list)

    def concept_masks(self, table: List[Concept]) -> np.ndarray:
        """按概念表顺序返回 (K,H,W) 的二值掩码"""
        _, height, width = self.image.shape
        masks = np.zeros((len(table), height, width), dtype=bool)
        index = {(c.category, c.name): c.id for c in table}
        background = np.ones((height, width), dtype=bool)
        for obj in self.objects:
            if not obj.mask.any():
                continue
            background &= ~obj.mask
            masks[index[("object", SHAPES[obj.shape])]] |= obj.mask
            masks[index[("color", OBJECT_COLORS[obj.color])]] |= obj.mask
            core = erode(obj.mask, iterations=2)
            masks[index[("part", "core")]] |= core
            masks[index[("part", "rim")]] |= obj.mask & ~core
        masks[index[("material", MATERIALS[self.material])]] |= background
        masks[index[("color", BACKGROUND_COLOR)]] |= background
        return masks


def erode(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """3x3 二值腐蚀，图像外视为背景"""
    inverse = torch.from_numpy(~mask).float()[None, None]
    for _ in range(iterations):
        inverse = F.max_pool2d(F.pad(inverse, (1, 1, 1, 1), value=1.0), kernel_size=3, stride=1)
    return ~(inverse[0, 0].numpy() > 0.5)


def shape_mask(shape: int, cy: float, cx: float, radius: float, size: int) -> np.ndarray:
    """以 (cy,cx) 为中心、半径 radius 的形状掩码"""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32)
    dy, dx = ys - cy, xs - cx
    name = SHAPES[shape]
    if name == "square":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    if name == "circle":
        return dx ** 2 + dy ** 2 <= radius ** 2
    if name == "triangle":
        return (dy >= -radius) & (dy <= radius) & (np.abs(dx) <= (dy + radius) / 2)
    if name == "diamond":
        return np.abs(dx) + np.abs(dy) <= radius
    if name == "cross":
        arm = radius / 3
        return ((np.abs(dx) <= radius) & (np.abs(dy) <= arm)) | ((np.abs(dy) <= radius) & (np.abs(dx) <= arm))
    if name == "ring":
        dist = np.sqrt(dx ** 2 + dy ** 2)
        return (dist <= radius) & (dist >= 0.55 * radius)
    raise InvalidArgument(f"未知形状 {shape}")


def render_texture(material: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """灰度背景纹理 (H,W)"""
    base = rng.uniform(0.35, 0.6)
    contrast = rng.uniform(0.08, 0.18)
    period = int(rng.choice([4, 6, 8]))
    ys, xs = np.mgrid[0:size, 0:size]
    name = MATERIALS[material]
    if name == "stripes":
        axis = xs if rng.random() < 0.5 else ys
        pattern = ((axis // (period // 2)) % 2) * 2 - 1
    elif name == "checker":
        pattern = (((xs // period) + (ys // period)) % 2) * 2 - 1
    elif name == "dots":
        offset = period // 2
        pattern = np.where(((xs % period) == offset) & ((ys % period) == offset), 1, -1)
    else:
        pattern = rng.uniform(-1, 1, size=(size, size))
    return np.clip(base + contrast * pattern, 0, 1).astype(np.float32)


def render_scene(size: int, n_objects: int, radius_range: Tuple[float, float],
                 rng: np.random.Generator, shapes: List[int] = None) -> Scene:
    """
    在灰度纹理背景上依次画 n_objects 个纯色物体，后画的遮挡先画的

    Args:
        size: 图像边长
        n_objects: 物体数量
        radius_range: 半径相对边长的范围
        rng: 随机数源
        shapes: 指定每个物体的形状，为空时随机
    """
    if size < 8 or n_objects < 0:
        raise InvalidArgument(f"非法的场景参数 size={size} n_objects={n_objects}")
    material = int(rng.integers(len(MATERIALS)))
    gray = render_texture(material, size, rng)
    image = np.repeat(gray[None], 3, axis=0)
    objects: List[SceneObject] = []
    for i in range(n_objects):
        shape = int(shapes[i]) if shapes is not None else int(rng.integers(len(SHAPES)))
        color = int(rng.integers(len(OBJECT_COLORS)))
        radius = rng.uniform(*radius_range) * size
        margin = int(np.ceil(radius))
        cy = rng.uniform(margin, size - 1 - margin)
        cx = rng.uniform(margin, size - 1 - margin)
        mask = shape_mask(shape, cy, cx, radius, size)
        if not mask.any():
            continue
        for previous in objects:
            previous.mask &= ~mask
        image[:, mask] = np.asarray(PALETTE[OBJECT_COLORS[color]], dtype=np.float32)[:, None]
        objects.append(SceneObject(shape=shape, color=color, mask=mask))
    return Scene(image=image, material=material, objects=objects)
