import json
import os
import threading
import time
from typing import Any, Dict, Iterable, List, Optional

from pydantic import BaseModel, Field

from modules.utils.Errors import NoData
from modules.utils.logger import get_logger

logger = get_logger("RecordStore")


class ResultRecord(BaseModel):
    """一条持久化的指标结果，只追加不修改"""
    run_id: str
    config_hash: str
    model_id: str
    method: Optional[str] = None
    metric: str
    value: Optional[float]
    se: Optional[float] = None
    timestamp: float = Field(default_factory=time.time)
    extra: Dict[str, Any] = Field(default_factory=dict)

    def key(self) -> tuple:
        return (self.model_id, self.method, self.metric)


class JsonlStore:
    """
    行分隔的结构化记录文件
    多线程写入经过同一把锁串行化
    """

    def __init__(self, path: str):
        self.path = path
        self.lock = threading.Lock()
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)

    def add_chunk(self, row: Dict[str, Any]) -> None:
        """追加一行"""
        line = json.dumps(row, sort_keys=True, ensure_ascii=False)
        with self.lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")

    def rows(self, **filters: Any) -> List[Dict[str, Any]]:
        """读取全部记录，可按字段过滤"""
        if not os.path.exists(self.path):
            return []
        result = []
        with open(self.path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                if all(row.get(k) == v for k, v in filters.items()):
                    result.append(row)
        return result


class RecordStore(JsonlStore):
    """ResultRecord 的存储"""

    def add_record(self, record: ResultRecord) -> None:
        self.add_chunk(record.model_dump(mode="json"))

    def add_records(self, records: Iterable[ResultRecord]) -> None:
        for record in records:
            self.add_record(record)

    def records(self, run_id: Optional[str] = None, latest: bool = True) -> List[ResultRecord]:
        """
        读取某次运行的记录

        Args:
            run_id: 运行标识，为空时读取全部
            latest: 同一 (模型, 方法, 指标) 重复写入时只保留最后一条
        """
        filters = {"run_id": run_id} if run_id else {}
        records = [ResultRecord(**row) for row in self.rows(**filters)]
        if not latest:
            return records
        merged: Dict[tuple, ResultRecord] = {}
        for record in records:
            merged[(record.run_id,) + record.key()] = record
        return list(merged.values())

    def require(self, run_id: str) -> List[ResultRecord]:
        records = self.records(run_id)
        if not records:
            raise NoData(f"运行 {run_id} 没有任何记录: {self.path}")
        return records
