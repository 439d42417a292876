#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试路径计算与关联矩阵模块
"""
import os
import pytest
import numpy as np
import scipy.sparse as sp
from core.errors import PathError
from core.netmodel import load_topology, topology_from_dict
from core.pathing import (
    IncidenceMatrix, Path, PathSet, add_phantom_edges, build_incidence, build_pathset, column_rank,
    dependent_columns, edge_disjoint_paths, k_shortest_paths, load_path_cache, pairwise_disjoint,
    restrict_pathset, save_path_cache
)


DATA_DIR = os.path.join(os.path.dirname(__file__), '..', 'data')


def _topology(count, edges, directed=False):
    links = []
    for src, dst, capacity in edges:
        links.append({"src": src, "dst": dst, "capacity_gbps": capacity})
        if not directed:
            links.append({"src": dst, "dst": src, "capacity_gbps": capacity})
    return topology_from_dict({
        "nodes": [{"id": i, "name": chr(ord('A') + i)} for i in range(count)],
        "links": links,
    })


def _nodes(paths):
    return [list(p.nodes) for p in paths]


def test_k_shortest_triangle():
    """测试三角形上的两条路径"""
    triangle = _topology(3, [(0, 1, 10), (1, 2, 10), (0, 2, 10)])

    assert _nodes(k_shortest_paths(triangle, (0, 2), 2)) == [[0, 2], [0, 1, 2]]
    assert _nodes(k_shortest_paths(triangle, (0, 2), 5)) == [[0, 2], [0, 1, 2]]


def test_k_shortest_ring_tie_break():
    """测试环上同跳数路径按字典序排列"""
    ring = _topology(4, [(0, 1, 10), (1, 2, 10), (2, 3, 10), (3, 0, 10)])

    assert _nodes(k_shortest_paths(ring, (0, 2), 2)) == [[0, 1, 2], [0, 3, 2]]
    assert _nodes(k_shortest_paths(ring, (0, 2), 1)) == [[0, 1, 2]]


def test_k_shortest_disconnected():
    """测试不连通商品返回空列表"""
    topology = _topology(3, [(0, 1, 10)])

    assert k_shortest_paths(topology, (0, 2), 3) == []
    with pytest.raises(PathError):
        k_shortest_paths(topology, (0, 0), 1)
    with pytest.raises(PathError):
        k_shortest_paths(topology, (0, 1), 0)


def test_edge_disjoint_triangle():
    """测试三角形上的边不相交路径"""
    triangle = _topology(3, [(0, 1, 10), (1, 2, 10), (0, 2, 10)])
    paths = edge_disjoint_paths(triangle, (0, 2), 2)

    assert _nodes(paths) == [[0, 2], [0, 1, 2]]
    assert pairwise_disjoint(paths)


def test_edge_disjoint_chain():
    """测试链路删除后不连通时只返回一条路径"""
    chain = _topology(3, [(0, 1, 10), (1, 2, 10)], directed=True)

    assert _nodes(edge_disjoint_paths(chain, (0, 2), 2)) == [[0, 1, 2]]


def test_edge_disjoint_shared_middle_link():
    """测试两条走廊共用中间链路时只有一条路径"""
    topology = _topology(4, [(0, 1, 10), (1, 2, 10), (0, 2, 10), (2, 3, 10)], directed=True)

    assert _nodes(edge_disjoint_paths(topology, (0, 3), 2)) == [[0, 2, 3]]
    assert _nodes(k_shortest_paths(topology, (0, 3), 2)) == [[0, 2, 3], [0, 1, 2, 3]]


def test_path_validation():
    """测试路径在拓扑上的校验"""
    triangle = _topology(3, [(0, 1, 10), (1, 2, 10)], directed=True)

    assert Path.on(triangle, [0, 1, 2]).links == ((0, 1), (1, 2))
    with pytest.raises(PathError):
        Path.on(triangle, [0, 2])
    with pytest.raises(PathError):
        Path.on(triangle, [0, 1, 0])


def test_build_pathset_records_disconnected():
    """测试路径集记录不连通商品并按商品顺序编号"""
    topology = _topology(4, [(0, 1, 10), (1, 2, 10)])
    pathset = build_pathset(topology, [(2, 0), (0, 2), (0, 3)], 2)

    assert pathset.commodities == ((0, 2), (0, 3), (2, 0))
    assert pathset.disconnected == ((0, 3),)
    assert list(pathset.index_range((0, 3))) == []
    assert list(pathset.index_range((2, 0))) == [1]
    assert pathset.total_paths == 2


def test_build_pathset_parallel_matches_serial():
    """测试并行路径计算与串行结果一致"""
    topology = load_topology(os.path.join(DATA_DIR, 'geant.json'))
    commodities = [(0, 22), (5, 18), (11, 12), (9, 6)]

    serial = build_pathset(topology, commodities, 4)
    parallel = build_pathset(topology, commodities, 4, workers=3)
    assert [p.nodes for _, p in serial.flat] == [p.nodes for _, p in parallel.flat]
    with pytest.raises(PathError):
        build_pathset(topology, commodities, 4, strategy="widest")


def test_incidence_single_path():
    """测试单条路径的关联矩阵"""
    topology = _topology(2, [(0, 1, 10)], directed=True)
    A = build_incidence(topology, build_pathset(topology, [(0, 1)], 1))

    assert A.matrix.toarray().tolist() == [[0.1]]


def test_incidence_disjoint_paths():
    """测试两条不相交单链路路径"""
    topology = _topology(3, [(0, 1, 100), (0, 2, 50)], directed=True)
    A = build_incidence(topology, build_pathset(topology, [(0, 1), (0, 2)], 1))

    assert np.allclose(A.matrix.toarray(), np.diag([0.01, 0.02]))
    assert column_rank(A) == (2, True)


def test_incidence_ring7():
    """测试七节点环拓扑中 abcde 路径对应的列"""
    topology = load_topology(os.path.join(DATA_DIR, 'ring7.json'))
    pathset = build_pathset(topology, [(0, 4)], 2)
    A = build_incidence(topology, pathset)

    assert _nodes(pathset.paths_of((0, 4))) == [[0, 5, 6, 4], [0, 1, 2, 3, 4]]
    column = A.matrix.toarray()[:, 1]
    used = {topology.links[e].src * 10 + topology.links[e].dst for e in np.flatnonzero(column)}
    assert used == {1, 12, 23, 34}
    assert np.allclose(column[np.flatnonzero(column)], 0.01)
    # 非零元个数等于所有路径的链路数之和
    assert A.matrix.nnz == 3 + 4


def test_incidence_entries_are_exact():
    """测试关联矩阵元素精确等于 0 或 1/c_e"""
    topology = load_topology(os.path.join(DATA_DIR, 'geant.json'))
    pathset = build_pathset(topology, [(0, 22), (22, 0), (6, 16)], 4)
    A = build_incidence(topology, pathset)

    coo = A.matrix.tocoo()
    for row, value in zip(coo.row, coo.data):
        assert value == 1.0 / topology.capacities[row]
    assert np.array_equal(A.membership.toarray(), (A.matrix.toarray() > 0).astype(float))


def test_column_rank_duplicates():
    """测试重复列的秩"""
    A = sp.csr_matrix(np.array([[0.1, 0.1], [0.2, 0.2]]))

    assert column_rank(A) == (1, False)
    assert dependent_columns(A) == [1] or dependent_columns(A) == [0]


def test_phantom_edges_noop_on_full_rank():
    """测试列满秩时不追加虚拟边"""
    A = IncidenceMatrix(sp.csr_matrix(np.diag([0.01, 0.02])), np.array([100.0, 50.0]), 2)
    augmented, count = add_phantom_edges(A, 1e-6)

    assert count == 0
    assert augmented is A


def test_phantom_edges_restore_full_rank():
    """测试虚拟边使重复列恢复列满秩"""
    A = IncidenceMatrix(sp.csr_matrix(np.array([[0.1, 0.1]])), np.array([10.0]), 1)
    augmented, count = add_phantom_edges(A, 1e-6)

    assert count == 1
    assert augmented.phantom.nnz == 1
    assert augmented.phantom.data[0] == 1e-9
    assert augmented.phantom_weight == 1e-6
    assert column_rank(augmented)[1]
    assert augmented.real.shape == (1, 2)


def test_phantom_edges_three_path_toy():
    """测试秩亏的三路径矩阵增广后秩为 3"""
    matrix = sp.csr_matrix(np.array([[0.1, 0.0, 0.1], [0.0, 0.1, 0.1]]))
    A = IncidenceMatrix(matrix, np.array([10.0, 10.0]), 2)
    assert column_rank(A) == (2, False)

    augmented, count = add_phantom_edges(A, 1e-3)
    assert count == 1
    assert column_rank(augmented) == (3, True)
    with pytest.raises(PathError):
        add_phantom_edges(A, 0.0)


def test_path_cache_round_trip(tmp_path):
    """测试路径缓存读写"""
    topology = _topology(4, [(0, 1, 10), (1, 2, 10), (2, 3, 10), (3, 0, 10)])
    pathset = build_pathset(topology, [(0, 2), (1, 3)], 2)
    cache = str(tmp_path / 'paths.json')
    save_path_cache(pathset, cache)

    loaded = load_path_cache(cache, topology)
    assert loaded.commodities == pathset.commodities
    assert [p.nodes for _, p in loaded.flat] == [p.nodes for _, p in pathset.flat]
    assert loaded.k == 2

    subset = restrict_pathset(loaded, [(1, 3), (2, 0)])
    assert subset.commodities == ((1, 3), (2, 0))
    assert subset.disconnected == ((2, 0),)


def test_path_cache_rejects_invalid_paths(tmp_path):
    """测试缓存中不存在的链路报错"""
    topology = _topology(3, [(0, 1, 10), (1, 2, 10)], directed=True)
    cache = tmp_path / 'paths.json'
    cache.write_text('{"paths": {"0-2": [[0, 2]]}}')

    with pytest.raises(PathError):
        load_path_cache(str(cache), topology)


def test_pathset_rejects_foreign_path():
    """测试路径集拒绝端点不符的路径"""
    with pytest.raises(PathError):
        PathSet(((0, 2),), {(0, 2): (Path((0, 1)),)})
