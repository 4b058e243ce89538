from dataclasses import dataclass

import numpy as np

from modules.utils.Errors import InvalidArgument
from modules.utils.TensorFile import read_tensor, write_tensor


def normalize(values: np.ndarray) -> np.ndarray:
    """min-max 归一化到 [0,1]，常数图归一化为全零"""
    values = np.asarray(values, dtype=np.float32)
    shifted = values - values.min()
    peak = shifted.max()
    if peak <= 0:
        return np.zeros_like(shifted)
    return (shifted / peak).astype(np.float32)


@dataclass
class AttributionMap:
    """输入分辨率的非负归因图 (H,W)"""
    values: np.ndarray
    target_class: int
    method: str
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise InvalidArgument(f"归因图必须是 (H,W)，得到 {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgument("归因图包含非有限值")
        if self.values.size and self.values.min() < 0:
            raise InvalidArgument("归因图必须非负")

    @property
    def shape(self):
        return self.values.shape

    def normalized_copy(self) -> "AttributionMap":
        return AttributionMap(normalize(self.values), self.target_class, self.method, normalized=True)

    def save(self, path: str) -> None:
        height, width = self.values.shape
        write_tensor(path, self.values, {"height": height, "width": width, "method": self.method,
                                         "class": int(self.target_class), "normalized": bool(self.normalized)})

    @classmethod
    def load(cls, path: str) -> "AttributionMap":
        values, header = read_tensor(path)
        if values.shape != (header["height"], header["width"]):
            raise InvalidArgument(f"{path}: 头中的尺寸与数据形状不符")
        return cls(values=values, target_class=int(header["class"]), method=header["method"],
                   normalized=bool(header["normalized"]))
