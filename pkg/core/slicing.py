#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
切片构造模块
节点权重、以大象源为种子的随机 k 路 BFS 容错切片、候选方案生成与去重、
源与转发两种爆炸半径，以及独立的切片校验器
"""

import json
import math
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import networkx as nx
import numpy as np

from core.decentral import SlicingConfig
from core.errors import SlicingError, SlicingFailure
from core.netmodel import DemandHistory, DemandMatrix
from log.logger import logger


WEIGHT_MODES = ("mean", "max")

# 贪心补重分支生效的剩余容量：|S_j| ≥ s_j − NEAR_FULL
NEAR_FULL = 2

FAILURE_DEAD_END = "dead_end"
FAILURE_WEIGHT = "weight_window"


@dataclass(frozen=True)
class NodeWeights:
    """节点权重 φ_v：从该节点出发的所有流的平均或最大需求之和"""
    values: tuple
    mode: str = "mean"

    def __len__(self):
        return len(self.values)

    def __getitem__(self, node):
        return self.values[node]

    @property
    def total(self):
        return float(sum(self.values))

    def as_array(self):
        return np.asarray(self.values, dtype=float)


def node_weights(history, mode="mean", node_count=None):
    """
    计算节点权重

    Args:
        history (DemandHistory|DemandMatrix): 需求历史或单个需求矩阵
        mode (str): mean 或 max
        node_count (int): 节点数，传入 DemandMatrix 时必填

    Returns:
        NodeWeights: 节点权重
    """
    if mode not in WEIGHT_MODES:
        raise SlicingError(f"unknown weight mode '{mode}'")
    if isinstance(history, DemandHistory):
        node_count = history.node_count
        matrix = history.mean_rates() if mode == "mean" else history.max_rates()
    elif isinstance(history, DemandMatrix):
        if node_count is None:
            raise SlicingError("node_count is required when weighting a single demand matrix")
        matrix = history
    else:
        raise SlicingError(f"cannot derive node weights from {type(history).__name__}")
    return NodeWeights(tuple(float(v) for v in matrix.egress(node_count)), mode)


def elephant_sources(weights, k):
    """
    最重的 k 个节点，权重相同时节点号小者优先

    Args:
        weights (NodeWeights): 节点权重
        k (int): 切片数

    Returns:
        list: 节点号列表
    """
    if k > len(weights):
        raise SlicingError(f"cannot seed {k} slices from {len(weights)} nodes")
    ranked = sorted(range(len(weights)), key=lambda v: (-weights[v], v))
    return ranked[:k]


def default_k(node_count):
    return max(2, int(round(math.sqrt(node_count))))


def default_sizes(node_count, k):
    """最均匀的切片大小，较小的切片在前"""
    if k < 2 or k > node_count:
        raise SlicingError(f"cannot split {node_count} nodes into {k} slices")
    base, extra = divmod(node_count, k)
    return [base] * (k - extra) + [base + 1] * extra


@dataclass(frozen=True)
class SliceSpec:
    """切片参数：k、各切片大小 s_j、目标重量 T、容差 ε、最大重试次数与种子"""
    k: int
    sizes: tuple
    target: float
    epsilon: float = 0.2
    max_retries: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise SlicingError(f"k must be at least 2, got {self.k}")
        if len(self.sizes) != self.k:
            raise SlicingError(f"expected {self.k} slice sizes, got {len(self.sizes)}")
        if any(s < 1 for s in self.sizes):
            raise SlicingError("slice sizes must be positive")
        if not (0 <= self.epsilon <= 1):
            raise SlicingError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.max_retries < 1:
            raise SlicingError(f"max_retries must be positive, got {self.max_retries}")

    @classmethod
    def build(cls, weights, k=None, sizes=None, epsilon=0.2, max_retries=1000, seed=0):
        """
        由节点权重构造切片参数，T = Σφ_v / k

        Args:
            weights (NodeWeights): 节点权重
            k (int): 切片数，默认 round(√n)
            sizes (list): 切片大小，默认最均匀划分
            epsilon (float): 容差
            max_retries (int): 最大重试次数
            seed (int): 随机种子

        Returns:
            SliceSpec: 切片参数
        """
        n = len(weights)
        k = k or default_k(n)
        sizes = tuple(sizes) if sizes else tuple(default_sizes(n, k))
        if sum(sizes) != n:
            raise SlicingError(f"slice sizes sum to {sum(sizes)}, expected {n}")
        return cls(k, sizes, weights.total / k, epsilon, max_retries, seed)

    @property
    def window(self):
        return self.target * (1 - self.epsilon), self.target * (1 + self.epsilon)


def _in_window(theta, window):
    low, high = window
    slack = 1e-9 * max(1.0, abs(high))
    return low - slack <= theta <= high + slack


def _grow(topology, spec, seeds, rng, weights=None):
    """
    k 路 BFS：各切片按种子顺序轮流从候选集合中取一个节点

    切片大小 s_j 视为多重集：切片长到剩余最大大小时认领该大小，
    候选耗尽时若当前大小仍未被认领也可提前认领，否则为死路

    Returns:
        tuple: (切片列表 或 None, 失败原因)
    """
    slices = [[v] for v in seeds]
    assigned = set(seeds)
    theta = [weights[v] if weights else 0.0 for v in seeds]
    candidates = [set(topology.neighbors(v)) - assigned for v in seeds]
    remaining = sorted(spec.sizes)
    growing = list(range(spec.k))
    low, high = spec.window

    while growing:
        for j in list(growing):
            cap = remaining[-1]
            if len(slices[j]) > cap:
                return None, FAILURE_DEAD_END
            if len(slices[j]) == cap:
                remaining.pop()
                growing.remove(j)
                continue
            candidates[j] -= assigned
            if not candidates[j]:
                if len(slices[j]) not in remaining:
                    return None, FAILURE_DEAD_END
                remaining.remove(len(slices[j]))
                growing.remove(j)
                continue
            ordered = sorted(candidates[j])
            if weights and theta[j] < low and len(slices[j]) >= cap - NEAR_FULL:
                feasible = [v for v in ordered if theta[j] + weights[v] <= high]
                if feasible:
                    heaviest = max(weights[v] for v in feasible)
                    ordered = [v for v in feasible if weights[v] == heaviest]
            chosen = ordered[int(rng.integers(len(ordered)))]
            slices[j].append(chosen)
            assigned.add(chosen)
            if weights:
                theta[j] += weights[chosen]
            candidates[j].update(u for u in topology.neighbors(chosen) if u not in assigned)

    if weights and not all(_in_window(t, spec.window) for t in theta):
        return None, FAILURE_WEIGHT
    return slices, None


def _attempt_result(slices, reason, attempt):
    if slices is None:
        logger.debug(f"第 {attempt + 1} 次切片尝试失败：{reason}", module="slicing")
        return None, reason
    return SlicingConfig(tuple(slices)), None


def _balanced_attempt(topology, weights, spec, attempt):
    if len(weights) != topology.node_count:
        raise SlicingError(f"expected {topology.node_count} node weights, got {len(weights)}")
    if spec.k > topology.node_count:
        raise SlicingError(f"cannot seed {spec.k} slices from {topology.node_count} nodes")
    rng = np.random.default_rng([int(spec.seed), attempt])
    elephants = elephant_sources(weights, spec.k)
    # 大象源随机分到各切片，决定轮转顺序
    seeds = [elephants[int(i)] for i in rng.permutation(spec.k)]
    slices, reason = _grow(topology, spec, seeds, rng, weights)
    return _attempt_result(slices, reason, attempt)


def _random_attempt(topology, spec, attempt):
    rng = np.random.default_rng([int(spec.seed), attempt])
    seeds = [int(v) for v in rng.choice(topology.node_count, size=spec.k, replace=False)]
    slices, reason = _grow(topology, spec, seeds, rng)
    return _attempt_result(slices, reason, attempt)


def _retry(attempt_fn, spec):
    failures = {}
    for attempt in range(spec.max_retries):
        config, reason = attempt_fn(attempt)
        if config is not None:
            logger.debug(f"第 {attempt + 1} 次尝试得到可行切片", module="slicing")
            return config
        failures[reason] = failures.get(reason, 0) + 1
    raise SlicingFailure(f"no feasible slicing within {spec.max_retries} attempts", failures)


def randomized_partition(topology, weights, spec):
    """
    容错切片：大象源随机分到各切片作为种子，k 路 BFS 轮流扩张

    切片重量偏低且接近大小上限时，在不超出 T(1+ε) 的候选中取权重最大者（同重随机），否则随机选取；
    死路或重量越界时以新的随机流整体重来

    Args:
        topology (Topology): 连通拓扑
        weights (NodeWeights): 节点权重
        spec (SliceSpec): 切片参数

    Returns:
        SlicingConfig: 可行切片

    Raises:
        SlicingFailure: 重试上限内未找到可行解
    """
    return _retry(lambda attempt: _balanced_attempt(topology, weights, spec, attempt), spec)


def random_partition(topology, spec):
    """只满足大小与连通约束的随机切片（随机种子节点，不考虑重量）"""
    return _retry(lambda attempt: _random_attempt(topology, spec, attempt), spec)


def _collect(attempt_fn, spec, n, workers):
    """
    依次执行尝试，按规范形式去重；找到 n 个或连续 max_retries 次无新方案时停止

    并行时按批次执行，结果按尝试序号合并，输出与线程数无关
    """
    if n < 1:
        raise SlicingError(f"candidate count must be positive, got {n}")
    unique = {}
    failures = {}
    stale = 0
    attempt = 0
    batch = max(1, workers) * 8

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while len(unique) < n and stale < spec.max_retries:
            indices = range(attempt, attempt + batch)
            if executor:
                outcomes = list(executor.map(attempt_fn, indices))
            else:
                outcomes = []
                for index in indices:
                    outcomes.append(attempt_fn(index))
            for config, reason in outcomes:
                attempt += 1
                if config is None:
                    failures[reason] = failures.get(reason, 0) + 1
                    stale += 1
                else:
                    key = config.key()
                    if key in unique:
                        stale += 1
                    else:
                        unique[key] = config.canonical()
                        stale = 0
                if len(unique) >= n or stale >= spec.max_retries:
                    break
    finally:
        if executor:
            executor.shutdown()

    logger.info(f"{attempt} 次尝试得到 {len(unique)} 个不同的切片方案，失败统计 {failures}", module="slicing")
    return list(unique.values()), failures


def generate_candidates(topology, weights, spec, n, workers=1):
    """
    生成最多 n 个不同的可行切片方案

    Args:
        topology (Topology): 拓扑
        weights (NodeWeights): 节点权重
        spec (SliceSpec): 切片参数
        n (int): 目标方案数
        workers (int): 并行线程数

    Returns:
        tuple: (方案列表, 失败原因计数)
    """
    return _collect(lambda attempt: _balanced_attempt(topology, weights, spec, attempt), spec, n, workers)


def random_candidates(topology, spec, n, workers=1):
    """随机切片的候选方案（对照组）"""
    return _collect(lambda attempt: _random_attempt(topology, spec, attempt), spec, n, workers)


def _egress(source, node_count):
    if isinstance(source, NodeWeights):
        return source.as_array()
    if isinstance(source, DemandMatrix):
        return source.egress(node_count)
    raise SlicingError(f"cannot compute blast radius from {type(source).__name__}")


def blast_radius_source(config, source):
    """
    源爆炸半径：各切片出口流量占总流量的最大比例

    Args:
        config (SlicingConfig): 切片配置
        source (DemandMatrix|NodeWeights): 需求或节点权重

    Returns:
        float: 半径，取值 (0, 1]

    Raises:
        SlicingError: 总流量为 0
    """
    node_count = max(max(s) for s in config.slices) + 1
    egress = _egress(source, node_count)
    total = float(egress.sum())
    if total <= 0:
        raise SlicingError("blast radius is undefined when total demand is zero")
    return max(float(egress[list(s)].sum()) for s in config.slices) / total


def blast_radius_transit(config, demands, pathset):
    """
    转发爆炸半径：任一候选路径经过切片内节点的流都计入该切片

    Args:
        config (SlicingConfig): 切片配置
        demands (DemandMatrix): 需求
        pathset (PathSet): 路径集

    Returns:
        float: 半径，取值 (0, 1]

    Raises:
        SlicingError: 总流量为 0
    """
    total = demands.total()
    if total <= 0:
        raise SlicingError("blast radius is undefined when total demand is zero")
    affected = [0.0] * config.k
    for commodity, rate in demands.items():
        touched = {config.slice_of(commodity[0])}
        for path in pathset.paths_of(commodity):
            touched.update(config.slice_of(v) for v in path.nodes)
        for j in touched:
            affected[j] += rate
    return max(affected) / total


def validate_slicing(topology, config, weights=None, spec=None):
    """
    独立校验切片：覆盖、互斥、连通、大小与重量窗口

    Args:
        topology (Topology): 拓扑
        config (SlicingConfig): 切片配置
        weights (NodeWeights): 节点权重，给出时检查重量窗口
        spec (SliceSpec): 切片参数，给出时检查 k 与大小

    Returns:
        list: 违规描述，空列表表示通过
    """
    violations = []
    counts = {}
    for members in config.slices:
        for v in members:
            counts[v] = counts.get(v, 0) + 1
    missing = sorted(set(range(topology.node_count)) - set(counts))
    if missing:
        violations.append(f"nodes not covered: {missing}")
    unknown = sorted(v for v in counts if not 0 <= v < topology.node_count)
    if unknown:
        violations.append(f"unknown nodes: {unknown}")
    repeated = sorted(v for v, c in counts.items() if c > 1)
    if repeated:
        violations.append(f"nodes in more than one slice: {repeated}")
    for index, members in enumerate(config.slices):
        known = [v for v in members if 0 <= v < topology.node_count]
        graph = topology.undirected.subgraph(known)
        if known and not nx.is_connected(graph):
            violations.append(f"slice {index} is not connected")

    if spec is not None:
        if config.k != spec.k:
            violations.append(f"expected {spec.k} slices, found {config.k}")
        elif sorted(len(s) for s in config.slices) != sorted(spec.sizes):
            violations.append(f"slice sizes {sorted(len(s) for s in config.slices)} "
                              f"do not match {sorted(spec.sizes)}")
    if weights is not None:
        target = weights.total / config.k
        epsilon = spec.epsilon if spec is not None else 0.0
        window = (target * (1 - epsilon), target * (1 + epsilon))
        for index, members in enumerate(config.slices):
            theta = sum(weights[v] for v in members if 0 <= v < len(weights))
            if not _in_window(theta, window):
                violations.append(f"slice {index} weight {theta:.6g} outside "
                                  f"[{window[0]:.6g}, {window[1]:.6g}]")
    return violations


def traffic_share(weights, node_fraction):
    """
    最重的 ⌈node_fraction·n⌉ 个节点发送的流量占比

    Args:
        weights (NodeWeights): 节点权重
        node_fraction (float): 节点比例，(0, 1]

    Returns:
        float: 占比
    """
    if not (0 < node_fraction <= 1):
        raise SlicingError(f"node fraction must lie in (0, 1], got {node_fraction}")
    total = weights.total
    if total <= 0:
        return 0.0
    count = int(math.ceil(node_fraction * len(weights) - 1e-9))
    heaviest = sorted(weights.values, reverse=True)[:count]
    return float(sum(heaviest)) / total


def best_candidate(candidates, source):
    """源爆炸半径最小的方案，相同时按规范形式排序"""
    if not candidates:
        raise SlicingError("no slicing candidates to choose from")
    return min(candidates, key=lambda c: (blast_radius_source(c, source), c.key()))


def describe_candidates(candidates, weights, demands=None, pathset=None):
    """
    候选方案的 JSON 描述，按源爆炸半径升序

    Args:
        candidates (list): 切片方案
        weights (NodeWeights): 节点权重
        demands (DemandMatrix): 需求，与 pathset 同时给出时附带转发爆炸半径
        pathset (PathSet): 路径集

    Returns:
        list: [{slices, weight_per_slice, blast_radius_source[, blast_radius_transit]}]
    """
    records = []
    for config in candidates:
        config = config.canonical()
        record = {
            "slices": config.to_list(),
            "weight_per_slice": [float(sum(weights[v] for v in s)) for s in config.slices],
            "blast_radius_source": blast_radius_source(config, weights),
        }
        if demands is not None and pathset is not None:
            record["blast_radius_transit"] = blast_radius_transit(config, demands, pathset)
        records.append(record)
    records.sort(key=lambda r: (r["blast_radius_source"], r["slices"]))
    return records


def save_candidates(records, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(records, f, indent=2, sort_keys=True)
        f.write("\n")


def load_slicing(path):
    """
    读取切片文件：单个 {"slices": [...]}、切片列表 [[...], ...] 或候选列表

    Args:
        path (str): 文件路径

    Returns:
        list: SlicingConfig 列表
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise SlicingError(f"slicing file not found: {path}")
    except json.JSONDecodeError as e:
        raise SlicingError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")

    if isinstance(data, dict):
        data = [data]
    elif isinstance(data, list) and data and all(isinstance(s, list) for s in data) \
            and all(isinstance(v, int) for s in data for v in s):
        data = [{"slices": data}]
    if not isinstance(data, list):
        raise SlicingError(f"{path}: expected a slicing object or a list of candidates")
    configs = []
    for position, record in enumerate(data):
        if not isinstance(record, dict) or "slices" not in record:
            raise SlicingError(f"{path}: candidate #{position} has no 'slices'")
        configs.append(SlicingConfig(tuple(tuple(s) for s in record["slices"])))
    return configs
