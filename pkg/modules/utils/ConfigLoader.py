import hashlib
import json
import os
from collections.abc import Mapping
from typing import Any, Dict, Optional

from pydantic import ValidationError
from ruamel.yaml import YAML

from modules.Modules.BaseConfig import ExperimentConfig
from modules.utils.Errors import ConfigError
from modules.utils.logger import get_logger

logger = get_logger("ConfigLoader")

default_config_file = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "Configs", "Sample.yaml")

# 不参与哈希的键：只影响运行位置和并发度，不影响结果
_HASH_EXCLUDED = {"output_dir", "workers"}


def read_config(configFile: str = default_config_file) -> Dict[str, Any]:
    """读取配置文件"""
    if not os.path.exists(configFile):
        raise ConfigError(f"配置文件不存在: {configFile}")
    yaml = YAML(typ="safe")
    with open(configFile, 'r', encoding='utf-8') as f:
        config = yaml.load(f)
    if config is None:
        return {}
    if not isinstance(config, Mapping):
        raise ConfigError(f"配置文件必须是扁平的键值映射: {configFile}")
    return dict(config)


def load_config(configFile: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    """
    读取并校验实验配置，未知键直接报错

    Args:
        configFile: 配置文件路径，为空时只使用默认值
        overrides: 命令行覆盖的键
    """
    raw = read_config(configFile) if configFile else {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = ExperimentConfig(**raw)
    except ValidationError as e:
        raise ConfigError(f"配置校验失败:\n{e}") from e
    logger.info(f"[Config] 配置加载完成，哈希 {config_hash(config)[:12]}")
    return config


def config_hash(config: ExperimentConfig) -> str:
    """配置的规范JSON的SHA-256"""
    payload = config.model_dump(mode="json", exclude=_HASH_EXCLUDED)
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
