import time
from abc import ABC, abstractmethod
from typing import Any, Callable, Optional, TYPE_CHECKING

from modules.utils.logger import get_logger

if TYPE_CHECKING:
    from modules.PipeLine.BasePipeLine import PipeLine


class BaseModule(ABC):
    """
    管线中的一个阶段
    子类实现 Thread_Task，并标注 input_data 和返回值的类型，PipeLine 据此检查相邻阶段能否衔接
    """

    def __init__(self):
        # 工作流模块资源
        self.next_model: Optional["BaseModule"] = None
        self.pipeline: Optional["PipeLine"] = None

        self.output: Any = None
        self.logger = get_logger(self.__class__.__name__)

    # 初始化方法，模块被加入 PipeLine 后调用
    def StartUp(self):
        pass

    @property
    def context(self):
        return self.pipeline.context

    @abstractmethod
    def Thread_Task(self, input_data: Any, response_func: Callable, next_func: Callable) -> Any:
        """
        模块的主要处理逻辑，子类必须实现

        Args:
            input_data: 上一个阶段的输出
            response_func: 结果记录的回调，写入 PipeLine 的记录存储
            next_func: 把输出交给下一个阶段
        """

    # 结果记录和传给下一个阶段的数据不同，因此设置了两个回调函数
    def Response_output(self, records) -> None:
        self.pipeline.add_chunk(records)

    def Next_output(self, output: Any) -> None:
        self.output = output

    def GetService(self, input_data: Any) -> Any:
        """执行本阶段，返回交给下一个阶段的数据"""
        start_time = time.time()
        self.output = None
        result = self.Thread_Task(input_data, self.Response_output, self.Next_output)
        if self.output is None:
            self.output = result
        self.logger.info(f"[{self.__class__.__name__}] 完成，耗时: {time.time() - start_time:.3f}秒")
        return self.output

    def GetOutPut(self) -> Any:
        """获取最后一次输出"""
        return self.output
