#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试日志模块
"""
import logging
from log.logger import Logger, parse_level


def _read(log):
    with open(log.log_file, 'r', encoding='utf-8') as f:
        return f.read()


def test_parse_level():
    """测试日志级别解析"""
    assert parse_level('debug') == logging.DEBUG
    assert parse_level(' Warning ') == logging.WARNING
    assert parse_level('verbose') == logging.INFO
    assert parse_level(None, logging.ERROR) == logging.ERROR


def test_logger_writes_module_tag(tmp_path, capsys):
    """测试文件日志带模块标签，控制台只显示 WARNING 及以上"""
    log = Logger(name='safete-test-tag', log_path=str(tmp_path), level='DEBUG')
    log.debug("路径缓存命中", module="pathing")
    log.warning("未找到可行切片", module="slicing")
    log.close()

    content = _read(log)
    assert " - DEBUG - MainThread - pathing - 路径缓存命中" in content
    assert " - WARNING - MainThread - slicing - 未找到可行切片" in content
    err = capsys.readouterr().err
    assert "slicing - 未找到可行切片" in err
    assert "路径缓存命中" not in err


def test_logger_level_filter(tmp_path):
    """测试文件日志按配置级别过滤"""
    log = Logger(name='safete-test-level', log_path=str(tmp_path), level='ERROR')
    log.info("开始仿真", module="experiment_manager")
    log.error("工作项 3 失败", module="experiment_manager")
    log.close()

    content = _read(log)
    assert "开始仿真" not in content
    assert "工作项 3 失败" in content


def test_logger_reuses_handlers(tmp_path):
    """测试同名日志器不重复挂载处理器"""
    first = Logger(name='safete-test-reuse', log_path=str(tmp_path))
    second = Logger(name='safete-test-reuse', log_path=str(tmp_path))

    assert first.logger is second.logger
    assert len(second.logger.handlers) == 2
    second.close()
    assert second.logger.handlers == []
