import json
import os
from typing import Any, Dict, Tuple

import numpy as np

from modules.utils.Errors import InvalidArgument, MissingArtifact

# 文件格式：第一行是JSON头（以换行结束），随后是行优先、小端、32位浮点的数据
# 头至少包含 shape，其余字段由调用方决定（如 height/width/method/class/normalized）
_DTYPE = np.dtype("<f4")


def write_tensor(path: str, values: np.ndarray, meta: Dict[str, Any] = None) -> None:
    """写入便携张量文件"""
    array = np.ascontiguousarray(values, dtype=_DTYPE)
    header = dict(meta or {})
    header["shape"] = list(array.shape)
    header["dtype"] = "<f4"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(array.tobytes(order="C"))


def read_tensor(path: str) -> Tuple[np.ndarray, Dict[str, Any]]:
    """读取便携张量文件，返回 (数组, 头)"""
    if not os.path.exists(path):
        raise MissingArtifact(f"张量文件不存在: {path}")
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        payload = f.read()
    shape = tuple(header["shape"])
    expected = int(np.prod(shape)) * _DTYPE.itemsize
    if len(payload) != expected:
        raise InvalidArgument(f"{path}: 数据长度 {len(payload)} 与头中的形状 {shape} 不符")
    array = np.frombuffer(payload, dtype=_DTYPE).reshape(shape).copy()
    return array, header
