import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, List, Optional, Type, Union

from modules.Modules.BaseConfig import ExperimentConfig
from modules.Modules.BaseModule import BaseModule
from modules.utils.ConfigLoader import config_hash
from modules.utils.Errors import InvalidArgument
from modules.utils.RecordStore import JsonlStore, RecordStore, ResultRecord
from modules.utils.logger import get_logger, set_log_dir

logger = get_logger("PipeLine")


def _type_name(annotation: Any) -> str:
    return getattr(annotation, "__name__", str(annotation))


@dataclass
class RunContext:
    """
    一次运行的配置和输出位置
    所有结果都经过这里的存储写盘，run_id = 配置哈希前10位 + 种子
    methods / augmentations 是命令行给的筛选，只决定本次处理哪些组合，不改配置也不改哈希
    """
    config: ExperimentConfig
    null_baseline: bool = False
    methods: Optional[List[str]] = None
    augmentations: Optional[List[str]] = None
    hash: str = field(init=False)

    def __post_init__(self):
        self.methods = self._subset("methods", self.methods, self.config.methods)
        self.augmentations = self._subset("augmentations", self.augmentations, self.config.augmentations)
        self.hash = config_hash(self.config)
        self.out_dir = os.path.abspath(self.config.output_dir)
        os.makedirs(self.out_dir, exist_ok=True)
        self.records = RecordStore(os.path.join(self.out_dir, "records.jsonl"))
        self.curves = JsonlStore(os.path.join(self.out_dir, "curves.jsonl"))
        self.per_sample = JsonlStore(os.path.join(self.out_dir, "per_sample.jsonl"))
        self.samples = JsonlStore(os.path.join(self.out_dir, "samples.jsonl"))

    @property
    def run_id(self) -> str:
        return f"{self.hash[:10]}-s{self.config.seed}"

    def model_id(self, augmentation: str) -> str:
        return f"{augmentation}-s{self.config.seed}"

    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    def checkpoint_path(self, model_id: str) -> str:
        return self.path("checkpoints", f"{model_id}.pt")

    def attribution_path(self, model_id: str, method: str, index: int, run_id: Optional[str] = None) -> str:
        return self.path("attributions", run_id or self.run_id, model_id, method, f"{index}.tensor")

    def sample_path(self, index: int, run_id: Optional[str] = None) -> str:
        return self.path("samples", run_id or self.run_id, f"{index}.tensor")

    def record(self, model_id: str, metric: str, value: Optional[float], method: Optional[str] = None,
               se: Optional[float] = None, **extra: Any) -> ResultRecord:
        return ResultRecord(run_id=self.run_id, config_hash=self.hash, model_id=model_id, method=method,
                            metric=metric, value=value, se=se, extra=extra)

    def with_seed(self, seed: int) -> "RunContext":
        return RunContext(self.config.model_copy(update={"seed": seed}), null_baseline=self.null_baseline,
                          methods=self.methods, augmentations=self.augmentations)

    @staticmethod
    def _subset(key: str, chosen: Optional[List[str]], available: List[str]) -> List[str]:
        if not chosen:
            return list(available)
        unknown = [c for c in chosen if c not in available]
        if unknown:
            raise InvalidArgument(f"{key} 筛选里的 {unknown} 不在配置的 {list(available)} 中")
        return [c for c in available if c in chosen]


class PipeLine:
    """
    串行的阶段链：前一个阶段的输出类型必须等于后一个阶段的输入类型
    阶段内部的扇出经过同一个 BoundedSemaphore 限流，结果记录经过同一把锁串行写入
    """

    def __init__(self, modules: List[Type[BaseModule]], context: RunContext):
        # 初始化模块实例
        self.modules = [m() for m in modules]
        self._link_instances()
        self.context = context
        self.logger = logger

        # 任务并发控制
        self.active_tasks = threading.BoundedSemaphore(context.config.workers)
        self.lock = threading.Lock()
        self.written = 0

        for module in self.modules:
            module.pipeline = self

        self._check_links()

    def _link_instances(self) -> None:
        """链接模块实例"""
        for i in range(len(self.modules) - 1):
            self.modules[i].next_model = self.modules[i + 1]

    def StartUp(self):
        set_log_dir(self.context.path("logs"))
        for module in self.modules:
            module.StartUp()

    def add_chunk(self, records: Union[ResultRecord, Iterable[ResultRecord]]) -> None:
        """写入结果记录"""
        if isinstance(records, ResultRecord):
            records = [records]
        with self.lock:
            for record in records:
                self.context.records.add_record(record)
                self.written += 1

    def fan_out(self, func: Callable, items: Iterable[Any]) -> List[Any]:
        """有界并行地对 items 执行 func，保持输入顺序"""
        def guarded(item):
            with self.active_tasks:
                return func(item)

        with ThreadPoolExecutor(max_workers=self.context.config.workers) as pool:
            return list(pool.map(guarded, items))

    def _check_links(self) -> None:
        """相邻阶段的 Thread_Task 标注必须首尾相接，否则在跑任何实验之前拒绝"""
        if not self.modules:
            raise InvalidArgument("管线至少要有一个阶段")
        for curr, nxt in zip(self.modules, self.modules[1:]):
            produced = curr.Thread_Task.__annotations__.get("return")
            expected = nxt.Thread_Task.__annotations__.get("input_data")
            if produced != expected:
                raise InvalidArgument(f"{type(curr).__name__} 产出 {_type_name(produced)}，"
                                      f"{type(nxt).__name__} 却需要 {_type_name(expected)}")
        self.logger.info("管线: " + " -> ".join(
            f"{type(m).__name__}[{_type_name(m.Thread_Task.__annotations__.get('input_data'))}]"
            for m in self.modules))

    @classmethod
    def create_pipeline(cls, *modules: Type[BaseModule], context: RunContext) -> 'PipeLine':
        """创建新的Pipeline实例"""
        return cls(list(modules), context)

    def GetService(self, input_data: Any) -> Any:
        """依次执行各阶段，返回最后一个阶段的输出"""
        self.StartUp()
        data = input_data
        for module in self.modules:
            data = module.GetService(data)
        return data

    def Output(self) -> Any:
        """获取最终输出"""
        return self.modules[-1].GetOutPut()
