#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
去中心化仿真模块
k 个切片控制器各自用扰动后的需求求解全局 TE 问题，
流量按源节点所属控制器的分配源路由转发，合成实际链路负载并计算与 oracle 的分歧指标
"""

import math
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property

import networkx as nx
import numpy as np

from core.errors import SlicingError, FormulationError
from core.formulation import TEObjective, build_instance, solve_instance
from core.netmodel import DemandMatrix
from core.pathing import build_incidence
from log.logger import logger


# 判定拥塞时的利用率容差
CONGESTION_TOLERANCE = 1e-6

# 路径分歧分母下限
DIVERGENCE_EPSILON = 1e-9

REPORT_COLUMNS = [
    "iteration", "method", "objective", "lambda", "k",
    "excess_flow_pct", "effective_throughput", "congested_frac",
    "max_normalized_util", "mean_path_divergence", "oracle_excess_flow_pct", "status",
]


@dataclass(frozen=True)
class SlicingConfig:
    """切片配置：k 个互不相交的节点集合"""
    slices: tuple

    def __post_init__(self):
        slices = tuple(tuple(sorted(int(v) for v in s)) for s in self.slices)
        object.__setattr__(self, "slices", slices)
        if len(slices) < 2:
            raise SlicingError(f"a slicing needs at least 2 slices, got {len(slices)}")
        seen = set()
        for index, members in enumerate(slices):
            if not members:
                raise SlicingError(f"slice {index} is empty")
            overlap = seen.intersection(members)
            if overlap:
                raise SlicingError(f"node {min(overlap)} appears in more than one slice")
            seen.update(members)

    @property
    def k(self):
        return len(self.slices)

    @cached_property
    def _owner(self):
        return {node: index for index, members in enumerate(self.slices) for node in members}

    def assignment(self):
        """节点 -> 切片序号"""
        return dict(self._owner)

    def slice_of(self, node):
        try:
            return self._owner[node]
        except KeyError:
            raise SlicingError(f"node {node} is not covered by the slicing")

    def canonical(self):
        """规范形式：切片按最小节点号排序"""
        return SlicingConfig(tuple(sorted(self.slices, key=lambda s: s[0])))

    def key(self):
        return self.canonical().slices

    def check(self, topology):
        """
        校验覆盖与连通性

        Args:
            topology (Topology): 拓扑
        """
        covered = set(self._owner)
        expected = set(range(topology.node_count))
        if covered != expected:
            missing = sorted(expected - covered)
            extra = sorted(covered - expected)
            raise SlicingError(f"slicing does not cover the topology (missing {missing[:5]}, unknown {extra[:5]})")
        for index, members in enumerate(self.slices):
            if not nx.is_connected(topology.undirected.subgraph(members)):
                raise SlicingError(f"slice {index} is not connected")

    def to_list(self):
        return [list(s) for s in self.slices]


@dataclass(eq=False)
class SliceRun:
    """一次去中心化运行：每个切片控制器的需求与解"""
    slicing: SlicingConfig
    demands: tuple
    solutions: tuple
    objective: TEObjective
    lam: float
    mask: frozenset
    pathset: object
    incidence: object

    @property
    def statuses(self):
        return tuple(s.status.value for s in self.solutions)

    @property
    def failed(self):
        return not all(s.optimal for s in self.solutions)


def _resolve_incidence(topology, pathset, incidence):
    return build_incidence(topology, pathset) if incidence is None else incidence


def run_decentralized(topology, pathset, slicing, demands, objective, lam, mask=None, settings=None,
                      incidence=None, normalize=False, reserve_fraction=0.0, workers=1, warm=None):
    """
    k 个控制器分别在各自的需求估计上求解同一全局实例

    Args:
        topology (Topology): 拓扑
        pathset (PathSet): 共享路径集
        slicing (SlicingConfig): 切片配置
        demands (list): k 份 DemandMatrix，第 j 份属于切片 j
        objective (TEObjective): 目标
        lam (float): λ，0 即 LP 基线
        mask (set): 正则掩码
        settings (SolverSettings): 求解参数
        incidence (IncidenceMatrix): 关联矩阵，默认由路径集构造
        normalize (bool): 容量约束归一化
        reserve_fraction (float): 预留容量比例
        workers (int): 并行求解线程数
        warm (TESolution): 各控制器 QP 共用的热启动解

    Returns:
        SliceRun: 运行结果；任一切片未达最优即标记失败
    """
    if len(demands) != slicing.k:
        raise FormulationError(f"expected {slicing.k} demand matrices, got {len(demands)}")
    A = _resolve_incidence(topology, pathset, incidence)

    def solve(matrix):
        instance = build_instance(objective, matrix, pathset, A, lam, mask, normalize, reserve_fraction)
        return instance, solve_instance(instance, settings, warm=warm)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(solve, demands))
    else:
        outcomes = [solve(matrix) for matrix in demands]

    instance = outcomes[0][0]
    run = SliceRun(slicing=slicing, demands=tuple(demands), solutions=tuple(o[1] for o in outcomes),
                   objective=instance.objective, lam=instance.lam, mask=instance.mask,
                   pathset=pathset, incidence=A)
    if run.failed:
        logger.warning(f"去中心化运行存在非最优切片：{run.statuses}", module="decentral")
    return run


def realized_allocations(run, slicing=None):
    """
    源路由合成：每个流按其源节点所属控制器的分配发送

    Args:
        run (SliceRun): 运行结果
        slicing (SlicingConfig): 切片配置，默认为运行时的配置

    Returns:
        np.ndarray: 按路径全局编号的实际分配量（Gbps）
    """
    slicing = slicing or run.slicing
    allocations = np.zeros(run.pathset.total_paths)
    for commodity in run.pathset.commodities:
        owner = slicing.slice_of(commodity[0])
        span = run.pathset.index_range(commodity)
        allocations[span] = run.solutions[owner].allocations[span]
    return allocations


def realized_loads(run, slicing=None):
    """
    实际链路负载 L_e = Σ_i Σ_p w_p^(j_i) d_i^(j_i) I(p,e)

    Args:
        run (SliceRun): 运行结果
        slicing (SlicingConfig): 切片配置

    Returns:
        np.ndarray: 每条链路的负载（Gbps）
    """
    return run.incidence.membership @ realized_allocations(run, slicing)


def mixed_demands(pathset, slicing, demands):
    """d_mix(i) = d^(j_i)(i)：每个商品取其源节点所属控制器的估计"""
    entries = {}
    for commodity in pathset.commodities:
        rate = demands[slicing.slice_of(commodity[0])].rate(*commodity)
        if rate > 0:
            entries[commodity] = rate
    return DemandMatrix(entries)


def oracle_solution(topology, pathset, slicing, demands, objective, lam=0.0, settings=None, incidence=None,
                    normalize=False):
    """
    oracle 控制器：在混合需求 d_mix 上求解一次全局实例

    Args:
        topology (Topology): 拓扑
        pathset (PathSet): 路径集
        slicing (SlicingConfig): 切片配置
        demands (list): k 份切片需求
        objective (TEObjective): 目标
        lam (float): λ，默认 0
        settings (SolverSettings): 求解参数
        incidence (IncidenceMatrix): 关联矩阵
        normalize (bool): 容量约束归一化

    Returns:
        TESolution: oracle 解
    """
    if len(demands) != slicing.k:
        raise FormulationError(f"expected {slicing.k} demand matrices, got {len(demands)}")
    A = _resolve_incidence(topology, pathset, incidence)
    instance = build_instance(objective, mixed_demands(pathset, slicing, demands), pathset, A, lam,
                              normalize=normalize)
    return solve_instance(instance, settings)


def _overflow(loads, topology):
    return float(np.maximum(np.asarray(loads) - topology.capacities, 0.0).sum())


def excess_flow(loads, topology, total_sent):
    """
    超出链路容量的流量占总发送量的百分比

    Args:
        loads (np.ndarray): 链路负载
        topology (Topology): 拓扑
        total_sent (float): 实际总发送量

    Returns:
        float: 百分比；总发送量为 0 时为 0
    """
    if total_sent <= 0:
        return 0.0
    return 100.0 * _overflow(loads, topology) / total_sent


def effective_throughput(run, oracle, topology, slicing=None):
    """
    无拥塞吞吐：(总发送量 − 总溢出) / oracle 总吞吐

    Args:
        run (SliceRun): 运行结果
        oracle (TESolution): oracle 解
        topology (Topology): 拓扑
        slicing (SlicingConfig): 切片配置

    Returns:
        float: 比值；oracle 吞吐为 0 时为 1.0
    """
    allocations = realized_allocations(run, slicing)
    loads = run.incidence.membership @ allocations
    return _effective_ratio(loads, float(allocations.sum()), oracle.throughput, topology)


def _effective_ratio(loads, total_sent, oracle_throughput, topology):
    if oracle_throughput <= 0:
        return 1.0
    return (total_sent - _overflow(loads, topology)) / oracle_throughput


def normalized_utilization(loads, topology, objective, oracle):
    """MMLU 下利用率除以 oracle MLU，其余目标为原始利用率；oracle MLU 为 0 时返回 None"""
    utilization = np.asarray(loads) / topology.capacities
    if TEObjective(objective) == TEObjective.MMLU:
        if oracle.mlu <= 0:
            return None
        return utilization / oracle.mlu
    return utilization


def congested_links(loads, topology, objective, oracle):
    """
    拥塞链路：MT/MCF 利用率超过 1，MMLU 利用率超过 oracle MLU

    Args:
        loads (np.ndarray): 链路负载
        topology (Topology): 拓扑
        objective (TEObjective): 目标
        oracle (TESolution): oracle 解

    Returns:
        tuple: (拥塞链路比例, 拥塞链路的归一化利用率列表)
    """
    normalized = normalized_utilization(loads, topology, objective, oracle)
    if normalized is None or topology.link_count == 0:
        return 0.0, []
    congested = normalized > 1.0 + CONGESTION_TOLERANCE
    return float(congested.sum()) / topology.link_count, [float(v) for v in normalized[congested]]


def path_divergence(run):
    """
    每条路径在控制器之间的最大相对分配差（百分比）

    两两比较 |x^(j) − x^(j')| / max(x^(j), x^(j'), ε) 的最大值等于 (max − min) / max(max, ε)

    Args:
        run (SliceRun): 运行结果

    Returns:
        np.ndarray: 每条路径的分歧百分比
    """
    stacked = np.vstack([s.allocations for s in run.solutions])
    high = stacked.max(axis=0)
    low = stacked.min(axis=0)
    return 100.0 * (high - low) / np.maximum(high, DIVERGENCE_EPSILON)


def summarize(values):
    """均值 / 中位数 / 最大值；空序列与 NaN 忽略"""
    data = np.asarray([v for v in values if v is not None and not math.isnan(v)], dtype=float)
    if not data.size:
        return {"mean": None, "median": None, "max": None}
    return {"mean": float(data.mean()), "median": float(np.median(data)), "max": float(data.max())}


@dataclass(eq=False)
class DivergenceReport:
    """一次运行相对 oracle 的分歧指标"""
    iteration: int
    method: str
    objective: TEObjective
    lam: float
    k: int
    status: str
    loads: np.ndarray = None
    utilization: np.ndarray = None
    excess_flow_pct: float = float('nan')
    effective_throughput: float = float('nan')
    congested_frac: float = float('nan')
    congested_utils: list = field(default_factory=list)
    max_normalized_util: float = float('nan')
    path_divergence: np.ndarray = None
    oracle_excess_flow_pct: float = float('nan')
    assignment: tuple = None

    @property
    def mean_path_divergence(self):
        if self.path_divergence is None or not self.path_divergence.size:
            return 0.0 if self.path_divergence is not None else float('nan')
        return float(self.path_divergence.mean())

    @property
    def failed(self):
        return self.status != "optimal"

    def to_row(self):
        row = {
            "iteration": self.iteration,
            "method": self.method,
            "objective": TEObjective(self.objective).value,
            "lambda": repr(float(self.lam)),
            "k": self.k,
            "excess_flow_pct": _format(self.excess_flow_pct),
            "effective_throughput": _format(self.effective_throughput),
            "congested_frac": _format(self.congested_frac),
            "max_normalized_util": _format(self.max_normalized_util),
            "mean_path_divergence": _format(self.mean_path_divergence),
            "oracle_excess_flow_pct": _format(self.oracle_excess_flow_pct),
            "status": self.status,
        }
        if self.assignment is not None:
            row["assignment"] = "-".join(str(i) for i in self.assignment)
        return row


def _format(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{float(value):.10g}"


def evaluate(run, oracle, topology, iteration=0, method="safete", assignment=None):
    """
    计算一次运行的全部分歧指标

    Args:
        run (SliceRun): 运行结果
        oracle (TESolution): oracle 解
        topology (Topology): 拓扑
        iteration (int): 迭代号
        method (str): 方法名
        assignment (tuple): 排列实验中的矩阵分配

    Returns:
        DivergenceReport: 指标；运行失败或 oracle 未达最优时 status 为 failed
    """
    base = dict(iteration=iteration, method=method, objective=run.objective, lam=run.lam,
                k=run.slicing.k, assignment=assignment)
    if run.failed or not oracle.optimal:
        return DivergenceReport(status="failed", **base)

    allocations = realized_allocations(run)
    loads = run.incidence.membership @ allocations
    total_sent = float(allocations.sum())
    fraction, congested = congested_links(loads, topology, run.objective, oracle)
    normalized = normalized_utilization(loads, topology, run.objective, oracle)
    divergence = path_divergence(run)
    active = divergence[np.vstack([s.allocations for s in run.solutions]).max(axis=0) > DIVERGENCE_EPSILON]

    return DivergenceReport(
        status="optimal",
        loads=loads,
        utilization=loads / topology.capacities,
        excess_flow_pct=excess_flow(loads, topology, total_sent),
        effective_throughput=_effective_ratio(loads, total_sent, oracle.throughput, topology),
        congested_frac=fraction,
        congested_utils=congested,
        max_normalized_util=float(normalized.max()) if normalized is not None and normalized.size else 0.0,
        path_divergence=active,
        oracle_excess_flow_pct=excess_flow(oracle.loads, topology, oracle.throughput),
        **base,
    )
