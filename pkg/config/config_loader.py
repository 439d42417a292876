#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
配置加载模块
负责从YAML配置文件和环境变量加载工作台的全局配置参数
"""

import os
import yaml
from dotenv import load_dotenv


DEFAULT_CONFIG_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config.yaml')


class ConfigLoader:
    """配置加载器类"""

    def __init__(self, config_file=DEFAULT_CONFIG_FILE):
        """
        初始化配置加载器

        Args:
            config_file (str): 配置文件路径
        """
        self.config_file = config_file
        self.config = {}
        self.load_config()

    def load_config(self):
        """
        加载配置文件和环境变量
        """
        # 加载环境变量
        load_dotenv()

        # 加载YAML配置文件
        with open(self.config_file, 'r', encoding='utf-8') as f:
            self.config = yaml.safe_load(f) or {}

        for section in ('concurrency', 'log', 'solver', 'slicing', 'experiment'):
            self.config.setdefault(section, {})

        # 环境变量覆盖线程数
        env_threads = os.getenv('SAFETE_THREADS')
        if env_threads is not None and env_threads.strip():
            try:
                threads = int(env_threads)
            except ValueError:
                threads = 0
            if threads < 1:
                raise ValueError("SAFETE_THREADS must be a positive integer")
            self.config['concurrency']['thread_count'] = threads

        # 环境变量覆盖日志配置
        env_level = os.getenv('SAFETE_LOG_LEVEL')
        if env_level:
            self.config['log']['level'] = env_level

        env_log_path = os.getenv('SAFETE_LOG_PATH')
        if env_log_path:
            self.config['log']['path'] = env_log_path

    def get(self, key_path, default=None):
        """
        获取配置值

        Args:
            key_path (str): 配置键路径，如 "concurrency.thread_count"
            default: 默认值

        Returns:
            配置值
        """
        keys = key_path.split('.')
        value = self.config

        for key in keys:
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default

        return value

    def get_concurrency_config(self):
        """
        获取并发配置

        Returns:
            dict: 并发配置字典
        """
        return self.config.get('concurrency', {})

    def get_log_config(self):
        """
        获取日志配置

        Returns:
            dict: 日志配置字典
        """
        return self.config.get('log', {})

    def get_solver_config(self):
        """
        获取求解器默认配置

        Returns:
            dict: 求解器配置字典
        """
        return self.config.get('solver', {})

    def get_slicing_config(self):
        """
        获取切片默认配置

        Returns:
            dict: 切片配置字典
        """
        return self.config.get('slicing', {})

    def get_experiment_config(self):
        """
        获取实验默认配置

        Returns:
            dict: 实验配置字典
        """
        return self.config.get('experiment', {})


# 单例模式
config_loader = ConfigLoader()
