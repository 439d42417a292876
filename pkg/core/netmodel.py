#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
网络模型模块
负责拓扑与需求数据的加载和校验、重力模型需求生成，以及模拟各切片控制器
独立预测误差的需求扰动模型
"""

import os
import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import networkx as nx

from core.errors import (
    TopologyParseError, SelfLoopError, DuplicateLinkError, CapacityError,
    UnknownNodeError, DemandError, PerturbationError
)
from log.logger import logger


@dataclass(frozen=True)
class Link:
    """有向链路"""
    src: int
    dst: int
    capacity: float


@dataclass(frozen=True)
class Topology:
    """
    有向带容量的广域网拓扑

    节点编号为 0..n-1 的稠密整数，每个有序节点对至多一条链路
    """
    names: tuple
    links: tuple

    def __post_init__(self):
        n = len(self.names)
        seen = set()
        for link in self.links:
            for node in (link.src, link.dst):
                if not isinstance(node, int) or node < 0 or node >= n:
                    raise UnknownNodeError(f"link {link.src}->{link.dst} references unknown node {node}")
            if link.src == link.dst:
                raise SelfLoopError(f"self-loop at node {self.names[link.src]}")
            key = (link.src, link.dst)
            if key in seen:
                raise DuplicateLinkError(
                    f"duplicate link {self.names[link.src]}->{self.names[link.dst]}")
            seen.add(key)
            if not (math.isfinite(link.capacity) and link.capacity > 0):
                raise CapacityError(
                    f"non-positive capacity {link.capacity} on link "
                    f"{self.names[link.src]}->{self.names[link.dst]}")

    @property
    def node_count(self):
        return len(self.names)

    @property
    def link_count(self):
        return len(self.links)

    def name(self, node):
        return self.names[node]

    @cached_property
    def link_index(self):
        """(src, dst) -> 链路序号"""
        return {(link.src, link.dst): i for i, link in enumerate(self.links)}

    @cached_property
    def capacities(self):
        values = np.array([link.capacity for link in self.links], dtype=float)
        values.flags.writeable = False
        return values

    @cached_property
    def graph(self):
        """有向图视图，边属性 index 为链路序号"""
        g = nx.DiGraph()
        g.add_nodes_from(range(self.node_count))
        for i, link in enumerate(self.links):
            g.add_edge(link.src, link.dst, index=i, capacity=link.capacity)
        return g

    @cached_property
    def undirected(self):
        """无向邻接视图，用于切片连通性判断"""
        return self.graph.to_undirected(as_view=False)

    def neighbors(self, node):
        """
        获取节点的无向邻居（按编号升序）

        Args:
            node (int): 节点编号

        Returns:
            list: 邻居节点编号
        """
        return sorted(self.undirected.neighbors(node))

    def link_label(self, index):
        link = self.links[index]
        return f"{self.names[link.src]}->{self.names[link.dst]}"

    def to_dict(self):
        return {
            "nodes": [{"id": i, "name": name} for i, name in enumerate(self.names)],
            "links": [{"src": l.src, "dst": l.dst, "capacity_gbps": l.capacity} for l in self.links],
        }


class DemandMatrix:
    """
    需求矩阵：有序商品 (src, dst) -> 速率（Gbps）

    构造后不可变，商品按 (src, dst) 升序构成规范顺序
    """

    def __init__(self, entries=None):
        """
        初始化需求矩阵

        Args:
            entries (dict): {(src, dst): rate}
        """
        cleaned = {}
        for key, rate in (entries or {}).items():
            src, dst = int(key[0]), int(key[1])
            if src == dst:
                raise DemandError(f"demand entry ({src},{dst}) has identical endpoints")
            rate = float(rate)
            if not math.isfinite(rate) or rate < 0:
                raise DemandError(f"demand entry ({src},{dst}) has invalid rate {rate}")
            cleaned[(src, dst)] = rate
        self._entries = dict(sorted(cleaned.items()))
        self._commodities = tuple(self._entries)

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        return isinstance(other, DemandMatrix) and self._entries == other._entries

    def __repr__(self):
        return f"DemandMatrix({len(self)} commodities, total={self.total():.6g})"

    def rate(self, src, dst):
        return self._entries.get((src, dst), 0.0)

    def items(self):
        return self._entries.items()

    def commodities(self):
        """规范顺序的商品列表"""
        return self._commodities

    def total(self):
        return float(sum(self._entries.values()))

    def as_vector(self, commodities=None):
        """
        按给定商品顺序导出速率向量

        Args:
            commodities (list): 商品顺序，默认规范顺序

        Returns:
            np.ndarray: 速率向量
        """
        order = self._commodities if commodities is None else commodities
        return np.array([self.rate(src, dst) for src, dst in order], dtype=float)

    def nodes(self):
        return sorted({node for key in self._entries for node in key})

    def egress(self, node_count):
        """
        每个节点作为源的总出流量

        Args:
            node_count (int): 节点数

        Returns:
            np.ndarray: 长度为 node_count 的出流量向量
        """
        values = np.zeros(node_count)
        for (src, _), rate in self._entries.items():
            values[src] += rate
        return values


@dataclass(frozen=True)
class DemandHistory:
    """按时间戳排序的需求矩阵序列"""
    snapshots: tuple
    node_count: int

    def __post_init__(self):
        if not self.snapshots:
            raise DemandError("demand history is empty")
        previous = None
        for timestamp, matrix in self.snapshots:
            if previous is not None and timestamp <= previous:
                raise DemandError(f"history timestamps not strictly increasing at {timestamp}")
            previous = timestamp
            for node in matrix.nodes():
                if node >= self.node_count:
                    raise DemandError(f"snapshot {timestamp} references unknown node {node}")

    def __len__(self):
        return len(self.snapshots)

    def commodities(self):
        keys = set()
        for _, matrix in self.snapshots:
            keys.update(matrix.commodities())
        return sorted(keys)

    def max_rates(self):
        """每个商品的历史最大速率"""
        return DemandMatrix({
            key: max(matrix.rate(*key) for _, matrix in self.snapshots)
            for key in self.commodities()
        })

    def mean_rates(self):
        """每个商品的历史平均速率（缺失快照按 0 计）"""
        count = len(self.snapshots)
        return DemandMatrix({
            key: sum(matrix.rate(*key) for _, matrix in self.snapshots) / count
            for key in self.commodities()
        })


@dataclass(frozen=True)
class PerturbationModel:
    """
    需求扰动模型

    parametric: δ ~ N(0, sigma)
    empirical: δ 从给定的相对偏差列表中均匀抽取
    扰动规则 d' = max(0, d·(1+δ))
    """
    kind: str = "parametric"
    sigma: float = 0.087
    deviations: tuple = field(default_factory=tuple)
    seed: int = 0

    def __post_init__(self):
        if self.kind == "parametric":
            if not (0 < self.sigma <= 1):
                raise PerturbationError(f"sigma must lie in (0, 1], got {self.sigma}")
        elif self.kind == "empirical":
            if not self.deviations:
                raise PerturbationError("empirical deviation list is empty")
            if not all(math.isfinite(d) for d in self.deviations):
                raise PerturbationError("empirical deviations must be finite")
        else:
            raise PerturbationError(f"unknown perturbation kind '{self.kind}'")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise PerturbationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def draw(self, rng, size):
        if self.kind == "parametric":
            return rng.normal(0.0, self.sigma, size)
        pool = np.asarray(self.deviations, dtype=float)
        return pool[rng.integers(0, len(pool), size)]


def _parse_topology(data, source):
    if not isinstance(data, dict) or "nodes" not in data or "links" not in data:
        raise TopologyParseError(f"{source}: expected an object with 'nodes' and 'links'")

    names = {}
    for position, record in enumerate(data["nodes"]):
        try:
            node_id = int(record["id"])
            name = str(record.get("name", node_id))
        except (KeyError, TypeError, ValueError):
            raise TopologyParseError(f"{source}: malformed node record #{position}: {record!r}")
        if node_id in names:
            raise TopologyParseError(f"{source}: duplicate node id {node_id}")
        names[node_id] = name
    if sorted(names) != list(range(len(names))):
        raise TopologyParseError(f"{source}: node ids must be dense 0..{len(names) - 1}")
    ordered = tuple(names[i] for i in range(len(names)))

    links = []
    for position, record in enumerate(data["links"]):
        try:
            src = int(record["src"])
            dst = int(record["dst"])
            capacity = float(record["capacity_gbps"])
        except (KeyError, TypeError, ValueError):
            raise TopologyParseError(f"{source}: malformed link record #{position}: {record!r}")
        for node in (src, dst):
            if node not in names:
                raise UnknownNodeError(f"{source}: link #{position} references unknown node {node}")
        links.append(Link(src, dst, capacity))

    return Topology(ordered, tuple(links))


def load_topology(path):
    """
    加载拓扑文件

    Args:
        path (str): JSON 拓扑文件路径

    Returns:
        Topology: 校验后的拓扑
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise TopologyParseError(f"topology file not found: {path}")
    except json.JSONDecodeError as e:
        raise TopologyParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")

    topology = _parse_topology(data, path)
    logger.info(f"已加载拓扑 {path}：{topology.node_count} 个节点，{topology.link_count} 条有向链路",
                module="netmodel")
    return topology


def topology_from_dict(data):
    """从内存中的字典构造拓扑（格式同拓扑文件）"""
    return _parse_topology(data, "<dict>")


def gravity_demands(topology, masses, total_volume):
    """
    重力模型需求生成

    d(i,j) = total · m_i·m_j / Σ_{a≠b} m_a·m_b

    Args:
        topology (Topology): 拓扑
        masses (dict): 节点 -> 质量（≥0）
        total_volume (float): 总需求（Gbps）

    Returns:
        DemandMatrix: 需求矩阵（只保留正速率项）
    """
    if not (math.isfinite(total_volume) and total_volume > 0):
        raise DemandError(f"total volume must be positive, got {total_volume}")

    vector = np.zeros(topology.node_count)
    for node, mass in masses.items():
        if node < 0 or node >= topology.node_count:
            raise DemandError(f"mass given for unknown node {node}")
        if not (math.isfinite(mass) and mass >= 0):
            raise DemandError(f"mass of node {node} must be non-negative, got {mass}")
        vector[node] = mass

    positive = np.flatnonzero(vector > 0)
    if positive.size < 2:
        raise DemandError("gravity model needs at least two nodes with positive mass")

    norm = vector.sum() ** 2 - np.sum(vector ** 2)
    entries = {}
    for i in positive:
        for j in positive:
            if i != j:
                entries[(int(i), int(j))] = total_volume * vector[i] * vector[j] / norm
    return DemandMatrix(entries)


def uniform_masses(topology):
    """所有节点质量为 1"""
    return {node: 1.0 for node in range(topology.node_count)}


def skewed_masses(topology, seed, zero_fraction=0.4, shape=1.16):
    """
    大象源偏斜质量：帕累托分布质量，其中 ⌊zero_fraction·n⌋ 个节点不发送流量

    Args:
        topology (Topology): 拓扑
        seed (int): 随机种子
        zero_fraction (float): 零质量节点比例
        shape (float): 帕累托形状参数

    Returns:
        dict: 节点 -> 质量
    """
    if not (0 <= zero_fraction < 1):
        raise DemandError(f"zero_fraction must lie in [0, 1), got {zero_fraction}")
    n = topology.node_count
    rng = np.random.default_rng(seed)
    values = rng.pareto(shape, n) + 1.0
    silent = rng.choice(n, size=int(math.floor(zero_fraction * n)), replace=False)
    values[silent] = 0.0
    return {node: float(values[node]) for node in range(n)}


def perturb(base, model, count, stream=0):
    """
    为每个切片控制器生成一份扰动后的需求矩阵

    随机流由 (seed, stream, 切片序号) 决定，每份矩阵按规范商品顺序抽取 δ 向量

    Args:
        base (DemandMatrix): 基准需求
        model (PerturbationModel): 扰动模型
        count (int): 切片数 k
        stream (int): 随机流编号（实验迭代号）

    Returns:
        list: k 份 DemandMatrix
    """
    if count < 1:
        raise PerturbationError(f"perturbation count must be at least 1, got {count}")
    commodities = base.commodities()
    rates = base.as_vector()
    matrices = []
    for slice_index in range(count):
        rng = np.random.default_rng([int(model.seed), int(stream), slice_index])
        delta = model.draw(rng, len(commodities))
        values = np.maximum(0.0, rates * (1.0 + delta))
        matrices.append(DemandMatrix(dict(zip(commodities, values.tolist()))))
    return matrices


def top_fraction(base, fraction):
    """
    保留最大的 ⌈fraction·count⌉ 个需求项，同值时商品序号小者优先

    Args:
        base (DemandMatrix): 需求矩阵
        fraction (float): 保留比例，(0, 1]

    Returns:
        DemandMatrix: 截取后的需求矩阵
    """
    if not (0 < fraction <= 1):
        raise DemandError(f"fraction must lie in (0, 1], got {fraction}")
    items = list(base.items())
    if not items:
        return DemandMatrix()
    keep = int(math.ceil(fraction * len(items) - 1e-9))
    ranked = sorted(range(len(items)), key=lambda i: (-items[i][1], i))
    return DemandMatrix({items[i][0]: items[i][1] for i in ranked[:keep]})


def load_demand_matrix(path, topology):
    """
    加载需求 CSV（表头 src,dst,gbps）

    Args:
        path (str): CSV 路径
        topology (Topology): 用于解析节点编号的拓扑

    Returns:
        DemandMatrix: 需求矩阵
    """
    entries = {}
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["src", "dst", "gbps"]:
                raise DemandError(f"{path}: expected header 'src,dst,gbps'")
            for line_no, row in enumerate(reader, start=2):
                if not row or not "".join(row).strip():
                    continue
                try:
                    src, dst, rate = int(row[0]), int(row[1]), float(row[2])
                except (IndexError, ValueError):
                    raise DemandError(f"{path}:{line_no}: malformed row {row!r}")
                for node in (src, dst):
                    if node < 0 or node >= topology.node_count:
                        raise DemandError(f"{path}:{line_no}: unknown node id {node}")
                if (src, dst) in entries:
                    raise DemandError(f"{path}:{line_no}: duplicate commodity ({src},{dst})")
                entries[(src, dst)] = rate
    except FileNotFoundError:
        raise DemandError(f"demand file not found: {path}")
    try:
        return DemandMatrix(entries)
    except DemandError as e:
        raise DemandError(f"{path}: {e}")


def save_demand_matrix(matrix, path):
    """
    保存需求 CSV，浮点数按 repr 写出以保证往返一致

    Args:
        matrix (DemandMatrix): 需求矩阵
        path (str): 输出路径
    """
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(["src", "dst", "gbps"])
        for (src, dst), rate in matrix.items():
            writer.writerow([src, dst, repr(rate)])


def load_demand_history(directory, topology):
    """
    加载需求历史目录，文件名为 <epoch秒>.csv

    Args:
        directory (str): 目录路径
        topology (Topology): 拓扑

    Returns:
        DemandHistory: 按时间戳升序的需求历史
    """
    if not os.path.isdir(directory):
        raise DemandError(f"history directory not found: {directory}")
    snapshots = []
    for filename in os.listdir(directory):
        stem, ext = os.path.splitext(filename)
        if ext != ".csv":
            continue
        if not stem.isdigit():
            logger.warning(f"跳过无法识别时间戳的历史文件：{filename}", module="netmodel")
            continue
        snapshots.append((int(stem), load_demand_matrix(os.path.join(directory, filename), topology)))
    if not snapshots:
        raise DemandError(f"history directory {directory} contains no demand snapshots")
    snapshots.sort(key=lambda item: item[0])
    logger.info(f"已加载需求历史 {directory}：{len(snapshots)} 个快照", module="netmodel")
    return DemandHistory(tuple(snapshots), topology.node_count)


def load_deviations(path, seed=0):
    """
    加载经验偏差文件（每行一个 δ）

    Args:
        path (str): 文件路径
        seed (int): 随机种子

    Returns:
        PerturbationModel: empirical 扰动模型
    """
    values = []
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, start=1):
                text = line.strip()
                if not text or text.startswith('#'):
                    continue
                try:
                    values.append(float(text))
                except ValueError:
                    raise PerturbationError(f"{path}:{line_no}: not a decimal deviation: {text!r}")
    except FileNotFoundError:
        raise PerturbationError(f"deviation file not found: {path}")
    return PerturbationModel(kind="empirical", deviations=tuple(values), seed=seed)
