#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常定义模块
工作台内所有模块共用的异常层次
"""


class SafeTEError(Exception):
    """工作台异常基类"""


class TopologyError(SafeTEError, ValueError):
    """拓扑数据不合法"""


class TopologyParseError(TopologyError):
    """拓扑文件无法解析"""


class SelfLoopError(TopologyError):
    """链路首尾为同一节点"""


class DuplicateLinkError(TopologyError):
    """同一有序节点对出现多条链路"""


class CapacityError(TopologyError):
    """链路容量非正"""


class UnknownNodeError(TopologyError):
    """引用了未声明的节点"""


class DemandError(SafeTEError, ValueError):
    """需求矩阵或需求历史不合法"""


class PerturbationError(SafeTEError, ValueError):
    """扰动模型参数不合法"""


class PathError(SafeTEError, ValueError):
    """路径或路径集不合法"""


class FormulationError(SafeTEError, ValueError):
    """TE 问题实例构造失败"""


class SolverError(SafeTEError, ValueError):
    """求解器输入不合法"""


class SlicingError(SafeTEError, ValueError):
    """切片配置不合法"""


class SlicingFailure(SlicingError):
    """随机切片在重试上限内未找到可行解"""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = dict(failures or {})


class ConfigError(SafeTEError, ValueError):
    """实验配置不合法"""
