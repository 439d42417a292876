#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
SafeTE 工作台命令行入口
子命令：simulate | slice | permute | lambda-sweep | validate-slicing | export-problem
"""

import sys
import os
import traceback
import argparse
from dotenv import load_dotenv

# 加载.env文件
load_dotenv()

# 添加项目根目录到Python路径
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from pydantic import ValidationError

from log.logger import logger
from config.run_config import apply_overrides, load_run_config
from core.errors import SafeTEError
from core.experiment_manager import (
    ExperimentManager, export_base_problem, prepare, slice_candidates, validate_candidates,
)


def _progress(done, total):
    print(f"\r进度：{done}/{total}", end="" if done < total else "\n", flush=True)


def _parse_lambdas(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid lambda list '{text}'")
    if not values or any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("lambda list must contain non-negative numbers")
    return values


def build_parser():
    """
    构造命令行解析器

    Returns:
        argparse.ArgumentParser: 解析器
    """
    parser = argparse.ArgumentParser(prog="safete", description="去中心化 WAN 正则化流量工程工作台")
    commands = parser.add_subparsers(dest="command", required=True)

    def experiment(name, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument('config', help='实验配置 JSON 文件')
        sub.add_argument('--seed', type=int, default=None, help='覆盖随机种子')
        sub.add_argument('--iterations', type=int, default=None, help='覆盖迭代次数')
        sub.add_argument('--lambda', dest='lam', type=float, default=None, help='覆盖正则系数 λ')
        sub.add_argument('--out', default=None, help='覆盖输出目录')
        return sub

    experiment('simulate', '去中心化仿真（正则化方法与 LP 基线）')
    experiment('slice', '生成容错切片候选方案')
    experiment('permute', '切片需求矩阵排列实验')
    sweep = experiment('lambda-sweep', 'λ 扫描实验')
    sweep.add_argument('--lambdas', type=_parse_lambdas, default=None, help='逗号分隔的 λ 列表，覆盖配置')
    validate = experiment('validate-slicing', '独立校验切片文件')
    validate.add_argument('slicing', help='切片或候选方案 JSON 文件')
    export = experiment('export-problem', '导出基准问题文件')
    export.add_argument('output', help='输出问题文件路径')
    export.add_argument('--dump', action='store_true', help='同时写出纯文本调试清单')
    return parser


def dispatch(args):
    """
    执行子命令

    Args:
        args (argparse.Namespace): 解析后的参数

    Returns:
        int: 退出码
    """
    config = load_run_config(args.config)
    config = apply_overrides(config, seed=args.seed, iterations=args.iterations, lam=args.lam, out=args.out)
    logger.info(f"执行子命令 {args.command}，配置 {args.config}", module="main")

    if args.command == 'slice':
        records = slice_candidates(prepare(config, need_slicing=False))
        print(f"生成 {len(records)} 个切片候选方案")
        return 0

    if args.command == 'validate-slicing':
        problems = validate_candidates(prepare(config, need_slicing=False), args.slicing)
        for index, violations in problems:
            print(f"方案 {index}：{'; '.join(violations)}")
        return 1 if problems else 0

    if args.command == 'export-problem':
        instance = export_base_problem(prepare(config), args.output, dump=args.dump)
        print(f"已导出 {instance.problem.n} 个变量、{instance.problem.m} 行约束到 {args.output}")
        return 0

    manager = ExperimentManager(prepare(config), progress=_progress)
    if args.command == 'simulate':
        summary = manager.simulate()
    elif args.command == 'permute':
        summary = manager.permute()
    else:
        summary = manager.lambda_sweep(args.lambdas)
    failed = summary.get("failed_rows", 0)
    if failed:
        logger.error(f"{failed} 行求解失败，详见输出目录", module="main")
        return 1
    return 0


def main(argv=None):
    """
    主函数

    Args:
        argv (list): 命令行参数，默认取 sys.argv

    Returns:
        int: 退出码
    """
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)

    except KeyboardInterrupt:
        logger.info("用户中断了实验", module="main")
        print("\ninterrupted")
        return 1

    except (SafeTEError, ValidationError) as e:
        logger.error(f"输入不合法：{str(e)}", module="main")
        print(f"错误：{str(e)}")
        return 2

    except Exception as e:
        logger.critical(f"实验发生致命错误：{str(e)}", module="main")
        logger.critical(traceback.format_exc(), module="main")
        print(f"错误：实验发生致命错误：{str(e)}")
        print("详细错误信息请查看日志文件")
        return 1


if __name__ == "__main__":
    sys.exit(main())
