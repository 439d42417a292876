#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
日志模块
带模块标签的工作台日志器：控制台只显示 WARNING 及以上，文件按小时轮转
"""

import os
import logging
import threading
from logging.handlers import TimedRotatingFileHandler
from datetime import datetime
from config.config_loader import config_loader


LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')

# 工作线程名便于区分并行工作项的日志
FILE_FORMAT = '%(asctime)s - %(levelname)s - %(threadName)s - %(module_name)s - %(message)s'
CONSOLE_FORMAT = '\n%(asctime)s - %(levelname)s - %(module_name)s - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def parse_level(text, default=logging.INFO):
    """
    解析日志级别名称，无法识别时取默认值

    Args:
        text (str): 级别名称
        default (int): 默认级别

    Returns:
        int: logging 级别常量
    """
    name = str(text or '').strip().upper()
    return getattr(logging, name) if name in LEVELS else default


class Logger:
    """工作台日志器"""

    def __init__(self, name='safete', log_path=None, level=None):
        """
        Args:
            name (str): logging 名称
            log_path (str): 日志目录，默认取 log.path
            level (str): 文件日志级别，默认取 log.level
        """
        log_config = config_loader.get_log_config()
        self.level = parse_level(level or log_config.get('level'))
        self.log_path = log_path or log_config.get('path', './safete_log/')
        self.backup_hours = int(log_config.get('backup_count', 7)) * 24

        self.logger = logging.getLogger(name)
        self.logger.setLevel(self.level)
        self.logger.propagate = False
        self.lock = threading.Lock()

        # 同名日志器重复创建时复用已有处理器
        if not self.logger.handlers:
            os.makedirs(self.log_path, exist_ok=True)
            self.logger.addHandler(self._console_handler())
            self.logger.addHandler(self._file_handler())

    @property
    def log_file(self):
        return os.path.join(self.log_path, f'safete_{datetime.now().strftime("%Y-%m-%d")}.log')

    def _console_handler(self):
        handler = logging.StreamHandler()
        handler.setLevel(logging.WARNING)
        handler.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt=DATE_FORMAT))
        return handler

    def _file_handler(self):
        handler = TimedRotatingFileHandler(self.log_file, when='H', interval=1,
                                           backupCount=self.backup_hours, encoding='utf-8')
        handler.setLevel(self.level)
        handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt=DATE_FORMAT))
        handler.suffix = '%H.log'
        return handler

    def log(self, level, message, module='main'):
        """
        记录一条日志

        Args:
            level (int): logging 级别
            message (str): 日志消息
            module (str): 模块标签
        """
        # 串行化输出，工作线程的记录不交错
        with self.lock:
            self.logger.log(level, message, extra={'module_name': module})

    def debug(self, message, module='main'):
        self.log(logging.DEBUG, message, module)

    def info(self, message, module='main'):
        self.log(logging.INFO, message, module)

    def warning(self, message, module='main'):
        self.log(logging.WARNING, message, module)

    def error(self, message, module='main'):
        self.log(logging.ERROR, message, module)

    def critical(self, message, module='main'):
        self.log(logging.CRITICAL, message, module)

    def close(self):
        """关闭并移除全部处理器"""
        with self.lock:
            for handler in list(self.logger.handlers):
                handler.close()
                self.logger.removeHandler(handler)


# 单例模式
logger = Logger()
