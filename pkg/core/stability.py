#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
稳定性检查模块
以可运行的方式检验正则化 TE 的理论性质：
多初值重启的解唯一性、对需求输入的经验 Lipschitz 比值、正则项 Hessian 的有限差分校验
"""

import itertools
from dataclasses import dataclass

import numpy as np

from core.errors import SolverError
from core.formulation import solve_instance
from core.netmodel import perturb
from core.solver import hessian_of_regularizer, regularizer_value, solve_qp
from log.logger import logger


@dataclass(eq=False)
class RestartReport:
    """多初值重启结果"""
    spread: float
    statuses: tuple
    solutions: tuple

    @property
    def all_optimal(self):
        return all(s == "optimal" for s in self.statuses)


def restart_spread(problem, starts=10, seed=0, settings=None):
    """
    从多个随机初始迭代点求解同一 QP，返回解之间最大的 ∞-范数差

    Args:
        problem (StandardProblem): 问题
        starts (int): 初值个数
        seed (int): 随机种子
        settings (SolverSettings): 求解参数

    Returns:
        RestartReport: spread 为两两最大差；存在非最优解时为 inf
    """
    if starts < 2:
        raise SolverError(f"restart check needs at least 2 starts, got {starts}")
    rng = np.random.default_rng(seed)
    solutions, statuses = [], []
    for _ in range(starts):
        initial = rng.uniform(0.0, 1.0, problem.n)
        result = solve_qp(problem, settings, initial_x=initial)
        statuses.append(result.status.value)
        solutions.append(result.x)

    if not all(s == "optimal" for s in statuses):
        logger.warning(f"重启检查中存在非最优解：{statuses}", module="stability")
        spread = float('inf')
    else:
        spread = max(float(np.max(np.abs(a - b))) for a, b in itertools.combinations(solutions, 2))
    logger.info(f"{starts} 个初值的解最大差 {spread:.3e}", module="stability")
    return RestartReport(spread, tuple(statuses), tuple(solutions))


@dataclass(eq=False)
class LipschitzReport:
    """扰动对上的 ‖Δx‖/‖Δd‖ 比值"""
    qp: np.ndarray
    lp: np.ndarray

    @property
    def qp_median(self):
        return float(np.median(self.qp)) if self.qp.size else float('nan')

    @property
    def lp_median(self):
        return float(np.median(self.lp)) if self.lp.size else float('nan')

    @property
    def qp_max(self):
        return float(np.max(self.qp)) if self.qp.size else float('nan')

    @property
    def regularized_smoother(self):
        return self.qp_median < self.lp_median


def lipschitz_ratios(build, base, model, lam, pairs=100, settings=None):
    """
    经验 Lipschitz 比值：对同一基准需求做成对扰动，比较解（分配量）的变化与需求变化

    Args:
        build (callable): build(demands, lam) -> TEInstance
        base (DemandMatrix): 基准需求
        model (PerturbationModel): 扰动模型
        lam (float): 正则化实例的 λ，LP 基线固定为 0
        pairs (int): 扰动对数量
        settings (SolverSettings): 求解参数

    Returns:
        LipschitzReport: QP 与 LP 的比值
    """
    commodities = base.commodities()
    qp, lp = [], []
    for pair in range(pairs):
        first, second = perturb(base, model, 2, stream=pair)
        delta_d = np.linalg.norm(first.as_vector(commodities) - second.as_vector(commodities))
        if delta_d <= 0:
            continue
        for target, weight, method in ((qp, lam, "qp"), (lp, 0.0, "simplex")):
            a = solve_instance(build(first, weight), settings, method=method)
            b = solve_instance(build(second, weight), settings, method=method)
            if not (a.optimal and b.optimal):
                logger.warning(f"扰动对 {pair} 的 {method} 求解未达最优，已跳过", module="stability")
                continue
            target.append(float(np.linalg.norm(a.allocations - b.allocations)) / delta_d)

    report = LipschitzReport(np.array(qp), np.array(lp))
    logger.info(f"Lipschitz 比值中位数：QP {report.qp_median:.4g}，LP {report.lp_median:.4g}",
                module="stability")
    return report


def _fd_hessian(A, lam, x, h):
    n = x.size
    H = np.zeros((n, n))
    g = lambda v: regularizer_value(A, lam, v)
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            value = (g(x + ei + ej) - g(x + ei - ej) - g(x - ei + ej) + g(x - ei - ej)) / (4.0 * h * h)
            H[i, j] = H[j, i] = value
    return H


def hessian_fd_error(A, lam, points=3, seed=0):
    """
    用 g(x)=λ‖Ax‖² 的中心差分校验 Hessian 2λAᵀA

    Args:
        A: 关联矩阵
        lam (float): λ > 0
        points (int): 随机点个数
        seed (int): 随机种子

    Returns:
        float: 各点中最大的相对误差（按最大元素归一）
    """
    H = hessian_of_regularizer(A, lam).toarray()
    scale = float(np.max(np.abs(H)))
    if scale == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        x = rng.standard_normal(H.shape[0])
        h = max(1.0, float(np.max(np.abs(x))))
        error = float(np.max(np.abs(_fd_hessian(A, lam, x, h) - H))) / scale
        worst = max(worst, error)
    return worst
