#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
路径计算模块
负责每个商品的候选路径计算，以及构造驱动正则项的归一化边-路径关联矩阵 A
"""

import json
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import networkx as nx
import scipy.sparse as sp
import scipy.linalg

from core.errors import PathError
from log.logger import logger


# 虚拟边容量（Gbps）
PHANTOM_CAPACITY = 1e9

# 秩判定相对容差
RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class Path:
    """无环路径，由节点序列描述"""
    nodes: tuple

    @property
    def src(self):
        return self.nodes[0]

    @property
    def dst(self):
        return self.nodes[-1]

    @property
    def hops(self):
        return len(self.nodes) - 1

    @property
    def links(self):
        return tuple(zip(self.nodes[:-1], self.nodes[1:]))

    @classmethod
    def on(cls, topology, nodes):
        """
        在拓扑上构造并校验路径

        Args:
            topology (Topology): 拓扑
            nodes (list): 节点序列

        Returns:
            Path: 校验后的路径
        """
        nodes = tuple(int(v) for v in nodes)
        if len(nodes) < 2:
            raise PathError(f"path {list(nodes)} has fewer than two nodes")
        if len(set(nodes)) != len(nodes):
            raise PathError(f"path {list(nodes)} repeats a node")
        for link in zip(nodes[:-1], nodes[1:]):
            if link not in topology.link_index:
                raise PathError(f"path {list(nodes)} uses missing link {link[0]}->{link[1]}")
        return cls(nodes)


@dataclass(frozen=True, eq=False)
class PathSet:
    """
    商品 -> 候选路径列表，路径全局编号按商品规范顺序连续分配

    不连通的有需求商品记录在 disconnected 中
    """
    commodities: tuple
    paths: dict
    disconnected: tuple = field(default_factory=tuple)
    strategy: str = "ksp"
    k: int = 4

    def __post_init__(self):
        for commodity in self.commodities:
            for path in self.paths.get(commodity, ()):
                if (path.src, path.dst) != commodity:
                    raise PathError(f"path {list(path.nodes)} does not serve commodity {commodity}")

    def paths_of(self, commodity):
        return self.paths.get(commodity, ())

    @cached_property
    def offsets(self):
        """商品 -> 其路径在全局编号中的起点"""
        result = {}
        position = 0
        for commodity in self.commodities:
            result[commodity] = position
            position += len(self.paths_of(commodity))
        return result

    @cached_property
    def flat(self):
        """全局编号顺序的 (商品, 路径) 列表"""
        return tuple((c, p) for c in self.commodities for p in self.paths_of(c))

    @property
    def total_paths(self):
        return len(self.flat)

    def index_range(self, commodity):
        start = self.offsets.get(commodity)
        if start is None:
            return range(0)
        return range(start, start + len(self.paths_of(commodity)))


@dataclass(frozen=True, eq=False)
class IncidenceMatrix:
    """
    归一化边-路径关联矩阵 A[e,p] = I(p,e)/c_e

    前 link_count 行对应真实链路，其后为虚拟边行
    """
    matrix: object
    capacities: np.ndarray
    link_count: int
    phantom_count: int = 0
    phantom_weight: float = 0.0

    @property
    def shape(self):
        return self.matrix.shape

    @cached_property
    def rank(self):
        return column_rank(self.matrix)[0]

    @property
    def real(self):
        """只含真实链路行的子矩阵"""
        return self.matrix[:self.link_count]

    @property
    def phantom(self):
        return self.matrix[self.link_count:]

    @cached_property
    def membership(self):
        """真实链路的 0/1 成员矩阵 I(p,e)"""
        result = sp.csr_matrix(self.real, copy=True)
        result.data[:] = 1.0
        return result


def _ordered_paths(graph, src, dst, k):
    """按 (跳数, 节点序列字典序) 取前 k 条简单路径"""
    collected = []
    try:
        for nodes in nx.shortest_simple_paths(graph, src, dst):
            if len(collected) >= k and len(nodes) > len(collected[k - 1]):
                break
            collected.append(tuple(nodes))
    except nx.NetworkXNoPath:
        return []
    collected.sort(key=lambda nodes: (len(nodes), nodes))
    return [Path(nodes) for nodes in collected[:k]]


def _check_commodity(topology, commodity, k):
    src, dst = commodity
    if k < 1:
        raise PathError(f"k must be at least 1, got {k}")
    for node in (src, dst):
        if node < 0 or node >= topology.node_count:
            raise PathError(f"commodity {commodity} references unknown node {node}")
    if src == dst:
        raise PathError(f"commodity {commodity} has identical endpoints")


def k_shortest_paths(topology, commodity, k):
    """
    按跳数的 k 条最短简单路径，同跳数按节点序列字典序

    Args:
        topology (Topology): 拓扑
        commodity (tuple): (src, dst)
        k (int): 路径数上限

    Returns:
        list: Path 列表，不连通时为空
    """
    _check_commodity(topology, commodity, k)
    return _ordered_paths(topology.graph, commodity[0], commodity[1], k)


def edge_disjoint_paths(topology, commodity, k):
    """
    贪心边不相交路径：取最短路径，删除其链路，重复至多 k 次

    Args:
        topology (Topology): 拓扑
        commodity (tuple): (src, dst)
        k (int): 路径数上限

    Returns:
        list: 两两链路不相交的 Path 列表
    """
    _check_commodity(topology, commodity, k)
    graph = topology.graph.copy()
    result = []
    while len(result) < k:
        found = _ordered_paths(graph, commodity[0], commodity[1], 1)
        if not found:
            break
        result.append(found[0])
        graph.remove_edges_from(found[0].links)
    return result


STRATEGIES = {
    "ksp": k_shortest_paths,
    "edsj": edge_disjoint_paths,
}


def build_pathset(topology, commodities, k, strategy="ksp", workers=1):
    """
    为一组商品计算候选路径

    Args:
        topology (Topology): 拓扑
        commodities (list): 商品列表
        k (int): 每个商品的路径数上限
        strategy (str): ksp 或 edsj
        workers (int): 并行线程数，结果按商品顺序合并

    Returns:
        PathSet: 路径集
    """
    if strategy not in STRATEGIES:
        raise PathError(f"unknown path strategy '{strategy}'")
    compute = STRATEGIES[strategy]
    ordered = tuple(sorted(set(tuple(c) for c in commodities)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(lambda c: compute(topology, c, k), ordered))
    else:
        results = [compute(topology, c, k) for c in ordered]

    paths = {}
    disconnected = []
    for commodity, found in zip(ordered, results):
        paths[commodity] = tuple(found)
        if not found:
            disconnected.append(commodity)
    if disconnected:
        logger.warning(f"{len(disconnected)} 个商品不连通：{disconnected[:5]}", module="pathing")

    pathset = PathSet(ordered, paths, tuple(disconnected), strategy, k)
    logger.info(f"路径集构造完成：{len(ordered)} 个商品，{pathset.total_paths} 条路径（{strategy}, k={k}）",
                module="pathing")
    return pathset


def path_link_matrix(topology, pathset):
    """
    0/1 链路-路径成员矩阵 I(p,e)

    Args:
        topology (Topology): 拓扑
        pathset (PathSet): 路径集

    Returns:
        scipy.sparse.csr_matrix: 形状 (|E|, 路径总数)
    """
    rows, cols = [], []
    for column, (_, path) in enumerate(pathset.flat):
        for link in path.links:
            index = topology.link_index.get(link)
            if index is None:
                raise PathError(f"path {list(path.nodes)} uses missing link {link[0]}->{link[1]}")
            rows.append(index)
            cols.append(column)
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(topology.link_count, pathset.total_paths))


def build_incidence(topology, pathset):
    """
    构造归一化关联矩阵 A[e,p] = I(p,e)/c_e

    Args:
        topology (Topology): 拓扑
        pathset (PathSet): 路径集

    Returns:
        IncidenceMatrix: 关联矩阵
    """
    membership = path_link_matrix(topology, pathset)
    scale = sp.diags(1.0 / topology.capacities)
    matrix = (scale @ membership).tocsr()
    return IncidenceMatrix(matrix, np.array(topology.capacities), topology.link_count)


def _dense(A):
    if isinstance(A, IncidenceMatrix):
        A = A.matrix
    if sp.issparse(A):
        return A.toarray()
    return np.atleast_2d(np.asarray(A, dtype=float))


def _equilibrate_rows(dense):
    scale = np.abs(dense).max(axis=1)
    scale[scale == 0] = 1.0
    return dense / scale[:, None]


def column_rank(A):
    """
    数值列秩：行均衡后做奇异值分解，容差为 1e-10·最大奇异值

    Args:
        A: IncidenceMatrix、稀疏或稠密矩阵

    Returns:
        tuple: (rank, full)
    """
    dense = _dense(A)
    if dense.size == 0:
        return 0, False
    singular = np.linalg.svd(_equilibrate_rows(dense), compute_uv=False)
    if singular.size == 0 or singular[0] == 0:
        return 0, False
    rank = int(np.sum(singular > RANK_TOLERANCE * singular[0]))
    return rank, rank == dense.shape[1]


def dependent_columns(A):
    """
    列主元 QR 选出的线性相关列（升序）

    Args:
        A: 关联矩阵

    Returns:
        list: 相关列序号
    """
    dense = _dense(A)
    rank, full = column_rank(dense)
    if full:
        return []
    _, _, pivots = scipy.linalg.qr(_equilibrate_rows(dense), mode='economic', pivoting=True)
    return sorted(int(c) for c in pivots[rank:])


def add_phantom_edges(A, lambda_prime, capacity=PHANTOM_CAPACITY):
    """
    为秩亏的关联矩阵追加虚拟边行，使其列满秩

    每个相关列对应一行，仅在该列上取 1/capacity

    Args:
        A (IncidenceMatrix): 关联矩阵
        lambda_prime (float): 虚拟边正则权重 λ'
        capacity (float): 虚拟边容量

    Returns:
        tuple: (增广 IncidenceMatrix, 虚拟边数)
    """
    if lambda_prime <= 0:
        raise PathError(f"lambda_prime must be positive, got {lambda_prime}")
    dependent = dependent_columns(A)
    if not dependent:
        return A, 0

    columns = A.shape[1]
    rows = np.arange(len(dependent))
    extra = sp.csr_matrix((np.full(len(dependent), 1.0 / capacity), (rows, dependent)),
                          shape=(len(dependent), columns))
    matrix = sp.vstack([A.matrix, extra]).tocsr()
    capacities = np.concatenate([A.capacities, np.full(len(dependent), capacity)])
    augmented = IncidenceMatrix(matrix, capacities, A.link_count,
                                A.phantom_count + len(dependent), lambda_prime)
    logger.info(f"追加 {len(dependent)} 条虚拟边，λ'={lambda_prime:g}", module="pathing")
    return augmented, len(dependent)


def save_path_cache(pathset, path):
    """
    保存路径缓存：{"src-dst": [[节点...], ...]}

    Args:
        pathset (PathSet): 路径集
        path (str): 输出文件
    """
    data = {
        f"{src}-{dst}": [list(p.nodes) for p in pathset.paths_of((src, dst))]
        for src, dst in pathset.commodities
    }
    payload = {"strategy": pathset.strategy, "k": pathset.k, "paths": data}
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def load_path_cache(path, topology):
    """
    加载路径缓存并在拓扑上逐条校验

    Args:
        path (str): 缓存文件
        topology (Topology): 拓扑

    Returns:
        PathSet: 路径集
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise PathError(f"path cache not found: {path}")
    except json.JSONDecodeError as e:
        raise PathError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")

    data = payload.get("paths", payload)
    paths = {}
    for key, sequences in data.items():
        try:
            src, dst = (int(v) for v in key.split("-"))
        except ValueError:
            raise PathError(f"{path}: malformed commodity key '{key}'")
        paths[(src, dst)] = tuple(Path.on(topology, nodes) for nodes in sequences)
    ordered = tuple(sorted(paths))
    disconnected = tuple(c for c in ordered if not paths[c])
    k = int(payload.get("k", max((len(v) for v in paths.values()), default=1)))
    return PathSet(ordered, paths, disconnected, payload.get("strategy", "ksp"), k)


def restrict_pathset(pathset, commodities):
    """
    将路径集限制到给定商品（保持全局顺序），缺失商品视为不连通

    Args:
        pathset (PathSet): 原路径集
        commodities (list): 商品

    Returns:
        PathSet: 子路径集
    """
    ordered = tuple(sorted(set(commodities)))
    paths = {c: pathset.paths_of(c) for c in ordered}
    disconnected = tuple(c for c in ordered if not paths[c])
    return PathSet(ordered, paths, disconnected, pathset.strategy, pathset.k)


def pairwise_disjoint(paths):
    """检查路径两两链路不相交"""
    for a, b in itertools.combinations(paths, 2):
        if set(a.links) & set(b.links):
            return False
    return True
