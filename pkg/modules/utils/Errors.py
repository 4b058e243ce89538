from typing import Optional


class MixInterpError(Exception):
    """所有实验错误的基类，exit_code 对应 cli 的退出码"""
    exit_code = 1


class InvalidArgument(MixInterpError, ValueError):
    exit_code = 2


class ConfigError(MixInterpError):
    exit_code = 2


class MissingArtifact(MixInterpError):
    exit_code = 3


class NoData(MixInterpError):
    exit_code = 3


class InsufficientSamples(MixInterpError):
    exit_code = 3

    def __init__(self, passed: int, required: int):
        super().__init__(f"只有 {passed} 个样本通过筛选，需要 {required} 个")
        self.passed = passed
        self.required = required


class TrainingFailure(MixInterpError):
    exit_code = 4

    def __init__(self, regime: str, epoch: int, detail: str = ""):
        super().__init__(f"训练 {regime} 在第 {epoch} 轮失败: {detail}")
        self.regime = regime
        self.epoch = epoch


class AttributionFailure(MixInterpError):
    exit_code = 4


class OracleFailure(MixInterpError):
    exit_code = 4

    def __init__(self, step: int, cause: Optional[BaseException] = None):
        super().__init__(f"打分失败，步骤 {step}: {cause}")
        self.step = step
