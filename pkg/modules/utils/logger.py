import logging
import os
import sys
from logging.handlers import RotatingFileHandler

# 日志目录，cli 启动后会被重定向到 <out>/logs
log_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))), "logs")

ROOT_NAME = "MixInterp"
_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_root_logger():
    """设置根logger，只配置一次"""
    root_logger = logging.getLogger()
    if not root_logger.handlers:
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(logging.Formatter(_FORMAT))
        root_logger.addHandler(console_handler)
        root_logger.setLevel(logging.INFO)


def set_log_dir(path: str) -> None:
    """
    重定向日志目录，已创建的logger会替换文件处理器

    Args:
        path: 新的日志目录
    """
    global log_dir
    log_dir = path
    os.makedirs(log_dir, exist_ok=True)
    manager = logging.Logger.manager
    for name, logger in list(manager.loggerDict.items()):
        if not isinstance(logger, logging.Logger) or not name.startswith(ROOT_NAME):
            continue
        for handler in list(logger.handlers):
            if isinstance(handler, RotatingFileHandler):
                logger.removeHandler(handler)
                handler.close()
                logger.addHandler(_file_handler(name))


def _file_handler(name: str) -> RotatingFileHandler:
    os.makedirs(log_dir, exist_ok=True)
    module_name = name.split('.')[-1]
    file_handler = RotatingFileHandler(
        os.path.join(log_dir, f"{module_name}.log"),
        maxBytes=10*1024*1024,  # 10MB
        backupCount=5
    )
    file_handler.setFormatter(logging.Formatter(_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
    return file_handler


def setup_logger(name=ROOT_NAME, level=logging.INFO):
    """控制台 + 按组件分文件的滚动日志，重复调用返回同一个实例"""
    logger = logging.getLogger(name)

    # 如果已经配置过，直接返回
    if logger.handlers:
        return logger

    logger.setLevel(level)

    # 控制台处理器
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(logging.Formatter(_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
    logger.addHandler(console_handler)

    # 文件处理器 - 按模块分类
    logger.addHandler(_file_handler(name))

    # 防止日志传播到根logger，避免重复打印
    logger.propagate = False

    return logger


def get_logger(module_name):
    """MixInterp.<组件名>，如 get_logger("IBA")"""
    return setup_logger(f"{ROOT_NAME}.{module_name}")
