#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验报告记录模块
负责逐行写入 CSV 报告并生成汇总 JSON
"""

import os
import csv
import json
import threading
from collections import defaultdict

from core.decentral import REPORT_COLUMNS, summarize
from log.logger import logger as base_logger


# 汇总统计的指标列
SUMMARY_METRICS = (
    "excess_flow_pct",
    "effective_throughput",
    "congested_frac",
    "max_normalized_util",
    "mean_path_divergence",
    "oracle_excess_flow_pct",
)


class ReportLogger:
    """实验报告记录器类"""

    def __init__(self, output_dir, name, columns=None):
        """
        初始化报告记录器

        Args:
            output_dir (str): 输出目录
            name (str): 报告名称，生成 <name>.csv 与 <name>_summary.json
            columns (list): CSV 表头，默认为分歧报告的列
        """
        self.output_dir = output_dir
        self.name = name
        self.columns = list(columns or REPORT_COLUMNS)
        self.csv_file = os.path.join(output_dir, f'{name}.csv')
        self.summary_file = os.path.join(output_dir, f'{name}_summary.json')

        # 确保输出目录存在
        os.makedirs(output_dir, exist_ok=True)

        # 按方法统计的指标
        self.metrics = defaultdict(lambda: defaultdict(list))
        self.rows = 0
        self.failed_list = []

        # 线程锁
        self.lock = threading.Lock()

        # 写入表头（覆盖旧文件）
        with open(self.csv_file, 'w', encoding='utf-8', newline='') as f:
            csv.DictWriter(f, fieldnames=self.columns, lineterminator='\n').writeheader()

    def log_report(self, report):
        """
        记录一行分歧报告，写入后立即落盘

        Args:
            report (DivergenceReport): 分歧报告
        """
        row = report.to_row()
        with self.lock:
            with open(self.csv_file, 'a', encoding='utf-8', newline='') as f:
                writer = csv.DictWriter(f, fieldnames=self.columns, lineterminator='\n', extrasaction='ignore')
                writer.writerow(row)
                f.flush()

            self.rows += 1
            if report.failed:
                self.failed_list.append({
                    "iteration": report.iteration,
                    "method": report.method,
                    "assignment": row.get("assignment", ""),
                })
                return
            stats = self.metrics[report.method]
            stats["excess_flow_pct"].append(report.excess_flow_pct)
            stats["effective_throughput"].append(report.effective_throughput)
            stats["congested_frac"].append(report.congested_frac)
            stats["max_normalized_util"].append(report.max_normalized_util)
            stats["mean_path_divergence"].append(report.mean_path_divergence)
            stats["oracle_excess_flow_pct"].append(report.oracle_excess_flow_pct)

    @property
    def failed(self):
        return len(self.failed_list)

    def generate_summary(self, extra=None):
        """
        生成汇总 JSON：每种方法各指标的均值 / 中位数 / 最大值与失败清单

        键排序且不含时间戳，相同输入的重跑逐字节一致

        Args:
            extra (dict): 附加字段

        Returns:
            dict: 汇总
        """
        with self.lock:
            methods = {}
            for method, stats in self.metrics.items():
                methods[method] = {metric: summarize(stats[metric]) for metric in SUMMARY_METRICS}
                methods[method]["rows"] = len(stats["excess_flow_pct"])
            summary = {
                "report": self.name,
                "rows": self.rows,
                "failed_rows": len(self.failed_list),
                "failed_list": list(self.failed_list),
                "methods": methods,
            }
            if extra:
                summary.update(extra)

            with open(self.summary_file, 'w', encoding='utf-8') as f:
                json.dump(summary, f, ensure_ascii=False, indent=2, sort_keys=True)
                f.write('\n')

        base_logger.info(f"报告已写入 {self.csv_file}（{self.rows} 行，失败 {len(self.failed_list)} 行）",
                         module="report_logger")
        return summary
