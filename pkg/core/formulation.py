#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
TE 问题构造模块
为 MT、MCF、MMLU 三种目标构造普通 LP 与正则化 QP 实例，并提供
正则项剪枝（无分歧链路、β 受限链路）与容量约束归一化
"""

import enum
import math
import dataclasses
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from core.errors import FormulationError
from core.solver import StandardProblem, SolveStatus, solve_lp_simplex, solve_qp
from log.logger import logger


class TEObjective(str, enum.Enum):
    MT = "mt"
    MCF = "mcf"
    MMLU = "mmlu"


# 默认正则系数
DEFAULT_LAMBDA = {
    TEObjective.MT: 1.0,
    TEObjective.MCF: 1e-4,
    TEObjective.MMLU: 1e-4,
}

# 虚拟边权重相对 λ 的比例
PHANTOM_LAMBDA_RATIO = 1e-6

# scratch 基线预留的容量比例
SCRATCH_RESERVE = 0.05


def default_lambda(objective):
    return DEFAULT_LAMBDA[TEObjective(objective)]


@dataclass(frozen=True, eq=False)
class TEInstance:
    """
    一个 TE 优化实例

    决策变量顺序：各活跃路径的 w_p，各链路的 u_e，以及 γ（MCF）或 Z（MMLU）
    """
    objective: TEObjective
    demands: object
    pathset: object
    incidence: object
    lam: float
    mask: frozenset
    normalize: bool = False
    reserve_fraction: float = 0.0

    @cached_property
    def active(self):
        """有需求且有路径的商品（规范顺序）"""
        return tuple(c for c, rate in self.demands.items()
                     if rate > 0 and self.pathset.paths_of(c))

    @cached_property
    def excluded(self):
        """有需求但不连通（或无候选路径）的商品"""
        return tuple(c for c, rate in self.demands.items()
                     if rate > 0 and not self.pathset.paths_of(c))

    @cached_property
    def columns(self):
        """w 变量对应的全局路径编号"""
        return np.array([p for c in self.active for p in self.pathset.index_range(c)], dtype=int)

    @cached_property
    def column_demands(self):
        return np.array([self.demands.rate(*c) for c in self.active
                         for _ in self.pathset.index_range(c)], dtype=float)

    @property
    def link_count(self):
        return self.incidence.link_count

    @property
    def path_count(self):
        return int(self.columns.size)

    @property
    def auxiliary_index(self):
        if self.objective == TEObjective.MT:
            return None
        return self.path_count + self.link_count

    @cached_property
    def problem(self):
        return _assemble(self)

    def variable_names(self):
        names = []
        for c in self.active:
            for position, _ in enumerate(self.pathset.paths_of(c)):
                names.append(f"w[{c[0]}-{c[1]}#{position}]")
        names += [f"u[{e}]" for e in range(self.link_count)]
        if self.objective == TEObjective.MCF:
            names.append("gamma")
        elif self.objective == TEObjective.MMLU:
            names.append("Z")
        return tuple(names)


def _assemble(instance):
    nw = instance.path_count
    ne = instance.link_count
    aux = 0 if instance.objective == TEObjective.MT else 1
    n = nw + ne + aux
    capacities = instance.incidence.capacities[:ne]
    keep = 1.0 - instance.reserve_fraction
    d = instance.column_demands

    A_real = sp.csc_matrix(instance.incidence.real)[:, instance.columns]
    U = (A_real @ sp.diags(d)).tocsr()
    identity_e = sp.identity(ne, format='csr')
    zero_aux = sp.csr_matrix((ne, aux))

    blocks = []
    lower, upper = [], []

    # u_e = Σ d_i w_p I(p,e) / c_e
    blocks.append(sp.hstack([U, -identity_e, zero_aux]))
    lower.append(np.zeros(ne))
    upper.append(np.zeros(ne))

    if instance.objective != TEObjective.MMLU and not instance.normalize:
        load = (sp.diags(capacities) @ U).tocsr()
        blocks.append(sp.hstack([load, sp.csr_matrix((ne, ne)), zero_aux]))
        lower.append(np.full(ne, -np.inf))
        upper.append(keep * capacities)

    commodities = len(instance.active)
    if commodities:
        rows, cols = [], []
        position = 0
        for i, c in enumerate(instance.active):
            count = len(instance.pathset.paths_of(c))
            rows += [i] * count
            cols += list(range(position, position + count))
            position += count
        S = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(commodities, nw))
        if instance.objective == TEObjective.MCF:
            aux_col = sp.csr_matrix(-np.ones((commodities, 1)))
        else:
            aux_col = sp.csr_matrix((commodities, aux))
        blocks.append(sp.hstack([S, sp.csr_matrix((commodities, ne)), aux_col]))
        if instance.objective == TEObjective.MT:
            lower.append(np.full(commodities, -np.inf))
            upper.append(np.ones(commodities))
        elif instance.objective == TEObjective.MCF:
            lower.append(np.zeros(commodities))
            upper.append(np.zeros(commodities))
        else:
            lower.append(np.ones(commodities))
            upper.append(np.ones(commodities))

    if instance.objective == TEObjective.MMLU:
        # Z - u_e ≥ 0
        blocks.append(sp.hstack([sp.csr_matrix((ne, nw)), -identity_e, sp.csr_matrix(np.ones((ne, 1)))]))
        lower.append(np.zeros(ne))
        upper.append(np.full(ne, np.inf))

    G = sp.vstack(blocks, format='csr')

    q = np.zeros(n)
    offset = 0.0
    if instance.objective == TEObjective.MT:
        q[:nw] = -d
        offset = float(sum(instance.demands.rate(*c) for c in instance.active))
    elif instance.objective == TEObjective.MCF:
        q[nw + ne] = -1.0
    else:
        q[nw + ne] = 1.0

    diagonal = np.zeros(n)
    for e in instance.mask:
        diagonal[nw + e] = 2.0 * instance.lam
    P = sp.diags(diagonal).tocsc()
    if instance.incidence.phantom_count and instance.incidence.phantom_weight > 0 and nw:
        B = (sp.csc_matrix(instance.incidence.phantom)[:, instance.columns] @ sp.diags(d)).tocsc()
        block = 2.0 * instance.incidence.phantom_weight * (B.T @ B)
        P = P + sp.block_diag([block, sp.csc_matrix((ne + aux, ne + aux))], format='csc')

    x_lower = np.zeros(n)
    x_upper = np.full(n, np.inf)
    if instance.normalize and instance.objective != TEObjective.MMLU:
        x_upper[nw:nw + ne] = keep
    if instance.objective == TEObjective.MCF:
        x_upper[nw + ne] = 1.0

    return StandardProblem(P=P, q=q, G=G, g_lower=np.concatenate(lower), g_upper=np.concatenate(upper),
                           x_lower=x_lower, x_upper=x_upper, offset=offset,
                           names=instance.variable_names())


def build_instance(objective, demands, pathset, A, lam, mask=None, normalize=False, reserve_fraction=0.0):
    """
    构造 TE 实例

    Args:
        objective (TEObjective|str): mt / mcf / mmlu
        demands (DemandMatrix): 需求
        pathset (PathSet): 路径集
        A (IncidenceMatrix): 关联矩阵（可含虚拟边行）
        lam (float): 正则系数 λ ≥ 0，0 即经典 LP
        mask (set): 保留平方项的链路，默认全部
        normalize (bool): 容量约束写成 u_e ≤ 1
        reserve_fraction (float): 预留容量比例

    Returns:
        TEInstance: 实例
    """
    try:
        objective = TEObjective(objective)
    except ValueError:
        raise FormulationError(f"unknown TE objective '{objective}'")
    if not (isinstance(lam, (int, float)) and math.isfinite(lam) and lam >= 0):
        raise FormulationError(f"lambda must be a finite non-negative number, got {lam}")
    if not (0 <= reserve_fraction < 1):
        raise FormulationError(f"reserve fraction must lie in [0, 1), got {reserve_fraction}")
    if A.shape[1] != pathset.total_paths:
        raise FormulationError("incidence matrix does not match the path set")
    for _, rate in demands.items():
        if rate < 0:
            raise FormulationError("negative demand")
    links = frozenset(range(A.link_count))
    mask = links if mask is None else frozenset(mask)
    if not mask <= links:
        raise FormulationError(f"mask references unknown links {sorted(mask - links)[:5]}")

    instance = TEInstance(objective, demands, pathset, A, float(lam), mask, bool(normalize),
                          float(reserve_fraction))
    if instance.excluded:
        logger.debug(f"{len(instance.excluded)} 个有需求的商品无可用路径，已排除", module="formulation")
    return instance


def build_mt(demands, pathset, A, lam, mask=None, normalize=False, reserve_fraction=0.0):
    """最大化吞吐：min Σd_i(1−Σw_p) + λΣ_mask u_e²"""
    return build_instance(TEObjective.MT, demands, pathset, A, lam, mask, normalize, reserve_fraction)


def build_mcf(demands, pathset, A, lam, mask=None, normalize=False, reserve_fraction=0.0):
    """最大并发流：max γ − λΣ_mask u_e²，γ ∈ [0,1]"""
    return build_instance(TEObjective.MCF, demands, pathset, A, lam, mask, normalize, reserve_fraction)


def build_mmlu(demands, pathset, A, lam, mask=None, normalize=False, reserve_fraction=0.0):
    """最小化最大链路利用率：min Z + λΣ_mask u_e²，无容量约束"""
    return build_instance(TEObjective.MMLU, demands, pathset, A, lam, mask, normalize, reserve_fraction)


def apply_pruning(instance, prune):
    """
    从正则项中剪除给定链路，可行域不变

    Args:
        instance (TEInstance): 实例
        prune (set): 要剪除平方项的链路

    Returns:
        TEInstance: 新实例
    """
    prune = frozenset(prune)
    links = frozenset(range(instance.link_count))
    if not prune <= links:
        raise FormulationError(f"prune set references unknown links {sorted(prune - links)[:5]}")
    return dataclasses.replace(instance, mask=instance.mask - prune)


def normalize_capacity(instance):
    """容量约束改写为 u_e ≤ 1；MMLU 无容量约束，原样返回"""
    if instance.objective == TEObjective.MMLU:
        return instance
    return dataclasses.replace(instance, normalize=True)


def divergence_free_links(topology, pathset, slicing):
    """
    无分歧链路：使用该链路的所有路径的源节点位于同一切片

    Args:
        topology (Topology): 拓扑
        pathset (PathSet): 路径集
        slicing (SlicingConfig): 切片配置

    Returns:
        set: 链路序号集合
    """
    owner = slicing.assignment()
    sources = [set() for _ in range(topology.link_count)]
    for commodity, path in pathset.flat:
        slice_index = owner[commodity[0]]
        for link in path.links:
            sources[topology.link_index[link]].add(slice_index)
    return {e for e, slices in enumerate(sources) if len(slices) <= 1}


def beta_constrained_links(topology, history, pathset, beta):
    """
    β 受限链路：(1/c_e)·Σ_i 𝟙_e(i)·max_t d_{i,t} ≤ β

    Args:
        topology (Topology): 拓扑
        history (DemandHistory): 需求历史
        pathset (PathSet): 路径集
        beta (float): β > 0

    Returns:
        set: 链路序号集合
    """
    if not beta > 0:
        raise FormulationError(f"beta must be positive, got {beta}")
    peaks = history.max_rates()
    bound = np.zeros(topology.link_count)
    for commodity in pathset.commodities:
        peak = peaks.rate(*commodity)
        if peak <= 0:
            continue
        used = {topology.link_index[link] for path in pathset.paths_of(commodity) for link in path.links}
        for e in used:
            bound[e] += peak
    ratio = bound / topology.capacities
    return {e for e in range(topology.link_count) if ratio[e] <= beta}


@dataclass(eq=False)
class TESolution:
    """TE 解：权重与分配均按路径集全局编号"""
    objective: TEObjective
    status: SolveStatus
    weights: np.ndarray
    allocations: np.ndarray
    loads: np.ndarray
    utilization: np.ndarray
    auxiliary: float
    objective_value: float
    result: object
    columns: np.ndarray = None

    @property
    def optimal(self):
        return self.status == SolveStatus.OPTIMAL

    @property
    def mlu(self):
        return float(self.utilization.max()) if self.utilization.size else 0.0

    @property
    def throughput(self):
        return float(self.allocations.sum())

    @property
    def gamma(self):
        return self.auxiliary if self.objective == TEObjective.MCF else None


def solution_from_result(instance, result):
    """将求解器结果映射回路径集全局编号"""
    total = instance.pathset.total_paths
    weights = np.zeros(total)
    demands = np.zeros(total)
    nw = instance.path_count
    weights[instance.columns] = np.maximum(result.x[:nw], 0.0)
    demands[instance.columns] = instance.column_demands
    allocations = weights * demands
    loads = instance.incidence.membership @ allocations
    capacities = instance.incidence.capacities[:instance.link_count]
    auxiliary = float(result.x[instance.auxiliary_index]) if instance.auxiliary_index is not None else float('nan')
    return TESolution(objective=instance.objective, status=result.status, weights=weights,
                      allocations=allocations, loads=loads, utilization=loads / capacities,
                      auxiliary=auxiliary, objective_value=result.objective_value, result=result,
                      columns=instance.columns)


def warm_start(instance, previous):
    """
    以活跃路径相同的先前解作为 QP 热启动点

    Args:
        instance (TEInstance): 待求解实例
        previous (TESolution): 先前的解

    Returns:
        tuple: (initial_x, initial_y)；目标、活跃路径或约束结构不同时为 (None, None)
    """
    if previous is None or previous.columns is None or previous.objective != instance.objective:
        return None, None
    if not np.array_equal(previous.columns, instance.columns):
        return None, None
    result = previous.result
    problem = instance.problem
    if result.duals is None or result.x.size != problem.n or result.duals.size != problem.m + problem.n:
        return None, None
    if not (np.all(np.isfinite(result.x)) and np.all(np.isfinite(result.duals))):
        return None, None
    return result.x, result.duals


def solve_instance(instance, settings=None, method="auto", initial_x=None, warm=None):
    """
    求解 TE 实例

    Args:
        instance (TEInstance): 实例
        settings (SolverSettings): 求解参数
        method (str): auto（无二次项用单纯形，否则 QP）/ simplex / qp
        initial_x (np.ndarray): QP 初始迭代点
        warm (TESolution): 热启动用的先前解，给出 initial_x 时忽略

    Returns:
        TESolution: 解
    """
    problem = instance.problem
    if method == "auto":
        method = "simplex" if problem.is_linear else "qp"
    if method == "simplex":
        result = solve_lp_simplex(problem, settings)
    elif method == "qp":
        initial_y = None
        if initial_x is None and warm is not None:
            initial_x, initial_y = warm_start(instance, warm)
        result = solve_qp(problem, settings, initial_x=initial_x, initial_y=initial_y)
    else:
        raise FormulationError(f"unknown solve method '{method}'")
    logger.debug(f"{instance.objective.value} 实例求解完成：{result.status.value}，"
                 f"{result.method} 迭代 {result.iterations} 次", module="formulation")
    return solution_from_result(instance, result)


def _format_row(names, row, lower, upper):
    terms = " ".join(f"{v:+.17g}*{names[j]}" for j, v in zip(row.indices, row.data))
    return f"{lower!r} <= {terms or '0'} <= {upper!r}"


def dump_instance(instance):
    """
    纯文本调试清单：目标项、约束行与变量界，便于跨运行比对

    Args:
        instance (TEInstance): 实例

    Returns:
        str: 文本
    """
    problem = instance.problem
    names = problem.names
    lines = [
        f"objective {instance.objective.value}",
        f"lambda {instance.lam!r}",
        f"normalize {instance.normalize}",
        f"reserve_fraction {instance.reserve_fraction!r}",
        f"mask {len(instance.mask)}/{instance.link_count}",
        f"excluded {len(instance.excluded)}",
        f"variables {problem.n}",
        f"minimize offset {problem.offset!r}",
    ]
    for j in np.flatnonzero(problem.q):
        lines.append(f"  linear {names[j]} {problem.q[j]!r}")
    upper = sp.triu(problem.P).tocoo()
    for i, j, v in sorted(zip(upper.row, upper.col, upper.data)):
        lines.append(f"  quadratic {names[i]} {names[j]} {float(v)!r}")
    lines.append(f"rows {problem.m}")
    G = problem.G.tocsr()
    for r in range(problem.m):
        lines.append(f"  r{r}: " + _format_row(names, G[r], problem.g_lower[r], problem.g_upper[r]))
    lines.append("bounds")
    for j in range(problem.n):
        lines.append(f"  {names[j]} {problem.x_lower[j]!r} {problem.x_upper[j]!r}")
    return "\n".join(lines) + "\n"
