#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试 TE 问题构造模块
"""
import os
import numpy as np
import pytest
import scipy.sparse as sp
from core.decentral import SlicingConfig
from core.errors import FormulationError
from core.formulation import (
    TEObjective, apply_pruning, beta_constrained_links, build_instance, build_mcf, build_mmlu, build_mt,
    default_lambda, divergence_free_links, dump_instance, normalize_capacity, solve_instance, warm_start
)
from core.netmodel import DemandHistory, DemandMatrix, load_topology, topology_from_dict
from core.pathing import IncidenceMatrix, build_incidence, build_pathset
from core.solver import SolverSettings, SolveStatus, solve_qp


DATA_DIR = os.path.join(os.path.dirname(__file__), '..', 'data')


def _two_path_toy():
    # s→t 容量 100，s→m 容量 50，m→t 近似无限
    topology = topology_from_dict({
        "nodes": [{"id": 0, "name": "s"}, {"id": 1, "name": "m"}, {"id": 2, "name": "t"}],
        "links": [
            {"src": 0, "dst": 2, "capacity_gbps": 100},
            {"src": 0, "dst": 1, "capacity_gbps": 50},
            {"src": 1, "dst": 2, "capacity_gbps": 1e6},
        ],
    })
    pathset = build_pathset(topology, [(0, 2)], 2)
    return topology, pathset, build_incidence(topology, pathset)


def test_two_path_toy_paths():
    """测试玩具拓扑的两条路径"""
    _, pathset, A = _two_path_toy()

    assert [p.nodes for p in pathset.paths_of((0, 2))] == [(0, 2), (0, 1, 2)]
    assert A.shape == (3, 2)


def test_mt_regularized_split():
    """测试 λ=1 时 MT 的唯一最优分配为 (0.8, 0.2)"""
    _, pathset, A = _two_path_toy()
    instance = build_mt(DemandMatrix({(0, 2): 60.0}), pathset, A, 1.0)
    solution = solve_instance(instance)

    assert solution.optimal
    assert solution.weights == pytest.approx([0.8, 0.2], abs=1e-5)
    assert solution.throughput == pytest.approx(60.0, abs=1e-4)
    assert solution.result.method == "qp"


def test_mt_lp_baseline():
    """测试 λ=0 时 MT 走单纯形法并满足全部需求"""
    _, pathset, A = _two_path_toy()
    instance = build_mt(DemandMatrix({(0, 2): 60.0}), pathset, A, 0.0)
    solution = solve_instance(instance)

    assert instance.problem.is_linear
    assert solution.result.method == "simplex"
    assert solution.optimal
    assert solution.throughput == pytest.approx(60.0, abs=1e-9)
    assert solution.objective_value == pytest.approx(0.0, abs=1e-9)
    assert np.all(solution.utilization <= 1.0 + 1e-9)


def test_mmlu_balances_utilization():
    """测试 MMLU 将最大链路利用率降到 0.4"""
    _, pathset, A = _two_path_toy()
    solution = solve_instance(build_mmlu(DemandMatrix({(0, 2): 60.0}), pathset, A, 0.0))

    assert solution.optimal
    assert solution.weights == pytest.approx([2.0 / 3.0, 1.0 / 3.0], abs=1e-9)
    assert solution.mlu == pytest.approx(0.4, abs=1e-9)
    assert solution.auxiliary == pytest.approx(0.4, abs=1e-9)


def test_mmlu_small_lambda_stays_close():
    """测试小 λ 的 MMLU 解接近 LP 解"""
    _, pathset, A = _two_path_toy()
    solution = solve_instance(build_mmlu(DemandMatrix({(0, 2): 60.0}), pathset, A, 1e-4))

    assert solution.optimal
    assert solution.weights.sum() == pytest.approx(1.0, abs=1e-6)
    assert solution.mlu == pytest.approx(0.4, abs=1e-3)


def _parallel_paths():
    # s→a→t 与 s→b→t 两条等容量路径，反向链路无流量
    links = []
    for src, dst in ((0, 1), (1, 3), (0, 2), (2, 3)):
        links += [{"src": src, "dst": dst, "capacity_gbps": 10}, {"src": dst, "dst": src, "capacity_gbps": 10}]
    topology = topology_from_dict({
        "nodes": [{"id": i, "name": name} for i, name in enumerate("sabt")],
        "links": links,
    })
    pathset = build_pathset(topology, [(0, 3)], 2)
    return topology, pathset, build_incidence(topology, pathset)


def test_mmlu_degenerate_bottlenecks():
    """测试四条链路同时达到最大利用率的退化 MMLU 实例"""
    _, pathset, A = _parallel_paths()
    solution = solve_instance(build_mmlu(DemandMatrix({(0, 3): 10.0}), pathset, A, 1e-4))

    assert solution.optimal
    assert solution.result.method == "qp"
    assert solution.weights == pytest.approx([0.5, 0.5], abs=1e-6)
    assert solution.auxiliary == pytest.approx(0.5, abs=1e-6)
    assert sorted(solution.utilization) == pytest.approx([0.0] * 4 + [0.5] * 4, abs=1e-6)


def test_mmlu_degenerate_polished_at_iteration_limit():
    """测试 ADMM 达到迭代上限时重猜活动集抛光"""
    _, pathset, A = _parallel_paths()
    problem = build_mmlu(DemandMatrix({(0, 3): 10.0}), pathset, A, 1e-4).problem
    reference = solve_qp(problem)
    start = reference.x + np.linspace(1e-5, 2e-5, problem.n)

    result = solve_qp(problem, SolverSettings(max_iter=1, polish_interval=1000),
                      initial_x=start, initial_y=reference.duals)
    assert result.status == SolveStatus.OPTIMAL
    assert result.polished
    assert result.iterations == 1
    assert result.x == pytest.approx(reference.x, abs=1e-6)


def test_warm_start_requires_same_columns():
    """测试热启动只复用活跃路径相同的解"""
    _, pathset, A = _two_path_toy()
    first = solve_instance(build_mt(DemandMatrix({(0, 2): 60.0}), pathset, A, 1.0))
    same = build_mt(DemandMatrix({(0, 2): 66.0}), pathset, A, 1.0)

    initial_x, initial_y = warm_start(same, first)
    assert initial_x is first.result.x
    assert initial_y is first.result.duals
    assert warm_start(build_mmlu(DemandMatrix({(0, 2): 60.0}), pathset, A, 1.0), first) == (None, None)
    assert warm_start(build_mt(DemandMatrix(), pathset, A, 1.0), first) == (None, None)
    assert warm_start(same, None) == (None, None)

    warmed = solve_instance(same, warm=first)
    assert warmed.optimal
    assert warmed.weights == pytest.approx(solve_instance(same).weights, abs=1e-5)


def test_mcf_concurrency():
    """测试需求超过总容量时 MCF 的 γ = 150/240"""
    _, pathset, A = _two_path_toy()
    solution = solve_instance(build_mcf(DemandMatrix({(0, 2): 240.0}), pathset, A, 0.0))

    assert solution.optimal
    assert solution.gamma == pytest.approx(0.625, abs=1e-9)
    assert solution.throughput == pytest.approx(150.0, abs=1e-6)


def test_mcf_gamma_capped_at_one():
    """测试需求很小时 γ 不超过 1"""
    _, pathset, A = _two_path_toy()
    solution = solve_instance(build_mcf(DemandMatrix({(0, 2): 10.0}), pathset, A, 0.0))

    assert solution.gamma == pytest.approx(1.0, abs=1e-9)
    assert solution.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_reserve_fraction():
    """测试预留容量后 MCF 的 γ 下降"""
    _, pathset, A = _two_path_toy()
    solution = solve_instance(build_mcf(DemandMatrix({(0, 2): 240.0}), pathset, A, 0.0, reserve_fraction=0.05))

    assert solution.gamma == pytest.approx(0.95 * 150.0 / 240.0, abs=1e-9)


def test_normalized_capacity_same_solution():
    """测试归一化容量约束不改变 MT 的正则化解"""
    _, pathset, A = _two_path_toy()
    instance = build_mt(DemandMatrix({(0, 2): 60.0}), pathset, A, 1.0)
    normalized = normalize_capacity(instance)

    assert normalized.normalize
    assert normalized.problem.m == instance.problem.m - instance.link_count
    assert solve_instance(normalized).weights == pytest.approx([0.8, 0.2], abs=1e-5)
    mmlu = build_mmlu(DemandMatrix({(0, 2): 60.0}), pathset, A, 0.0)
    assert normalize_capacity(mmlu) is mmlu


def test_instance_layout():
    """测试变量布局与二次项"""
    _, pathset, A = _two_path_toy()
    instance = build_mcf(DemandMatrix({(0, 2): 60.0}), pathset, A, 0.5)

    assert instance.variable_names() == ("w[0-2#0]", "w[0-2#1]", "u[0]", "u[1]", "u[2]", "gamma")
    assert instance.auxiliary_index == 5
    assert instance.problem.P.diagonal().tolist() == [0.0, 0.0, 1.0, 1.0, 1.0, 0.0]
    assert build_mt(DemandMatrix({(0, 2): 60.0}), pathset, A, 0.5).auxiliary_index is None


def test_pruning_removes_square_terms():
    """测试剪枝只去掉平方项而不改变约束"""
    _, pathset, A = _two_path_toy()
    instance = build_mt(DemandMatrix({(0, 2): 60.0}), pathset, A, 1.0)
    pruned = apply_pruning(instance, {2})

    assert pruned.mask == frozenset({0, 1})
    assert pruned.problem.P.diagonal().tolist() == [0.0, 0.0, 2.0, 2.0, 0.0]
    assert (pruned.problem.G != instance.problem.G).nnz == 0
    with pytest.raises(FormulationError):
        apply_pruning(instance, {7})

    everything = apply_pruning(instance, {0, 1, 2})
    assert everything.problem.is_linear


def test_excluded_commodities():
    """测试不连通商品被排除"""
    topology = topology_from_dict({
        "nodes": [{"id": i, "name": n} for i, n in enumerate("abc")],
        "links": [{"src": 0, "dst": 1, "capacity_gbps": 10}],
    })
    pathset = build_pathset(topology, [(0, 1), (0, 2)], 2)
    A = build_incidence(topology, pathset)
    instance = build_mt(DemandMatrix({(0, 1): 5.0, (0, 2): 3.0}), pathset, A, 0.0)

    assert instance.active == ((0, 1),)
    assert instance.excluded == ((0, 2),)
    solution = solve_instance(instance)
    assert solution.throughput == pytest.approx(5.0)


def test_phantom_rows_enter_quadratic_term():
    """测试虚拟边行进入路径变量的二次项"""
    _, pathset, A = _two_path_toy()
    matrix = sp.vstack([A.matrix, sp.csr_matrix(np.array([[1e-3, 0.0]]))]).tocsr()
    augmented = IncidenceMatrix(matrix, np.concatenate([A.capacities, [1e3]]), 3, 1, 0.5)
    instance = build_mt(DemandMatrix({(0, 2): 60.0}), pathset, augmented, 1.0)

    P = instance.problem.P.toarray()
    assert P[0, 0] == pytest.approx(2.0 * 0.5 * (60.0 * 1e-3) ** 2)
    assert P[1, 1] == 0.0


def test_build_instance_validation():
    """测试实例参数校验"""
    _, pathset, A = _two_path_toy()
    demands = DemandMatrix({(0, 2): 60.0})

    with pytest.raises(FormulationError, match="unknown TE objective"):
        build_instance("maxflow", demands, pathset, A, 0.0)
    with pytest.raises(FormulationError):
        build_mt(demands, pathset, A, -1.0)
    with pytest.raises(FormulationError):
        build_mt(demands, pathset, A, float('inf'))
    with pytest.raises(FormulationError):
        build_mt(demands, pathset, A, 0.0, reserve_fraction=1.0)
    with pytest.raises(FormulationError):
        build_mt(demands, pathset, A, 0.0, mask={5})
    other = build_pathset(_two_path_toy()[0], [(0, 2)], 1)
    with pytest.raises(FormulationError, match="does not match"):
        build_mt(demands, other, A, 0.0)


def test_default_lambda():
    """测试各目标的默认 λ"""
    assert default_lambda("mt") == 1.0
    assert default_lambda(TEObjective.MCF) == 1e-4
    assert default_lambda("mmlu") == 1e-4


def test_divergence_free_links():
    """测试无分歧链路只被单个切片的源使用"""
    topology = load_topology(os.path.join(DATA_DIR, 'ring7.json'))
    slicing = SlicingConfig(([0, 1, 2], [3, 4, 5, 6]))
    index = topology.link_index

    pathset = build_pathset(topology, [(0, 4), (4, 0)], 2)
    assert divergence_free_links(topology, pathset, slicing) == set(range(topology.link_count))

    pathset = build_pathset(topology, [(0, 4), (3, 4)], 2)
    free = divergence_free_links(topology, pathset, slicing)
    assert index[(3, 4)] not in free
    assert index[(0, 1)] in free
    assert index[(4, 3)] in free


def test_beta_constrained_links():
    """测试 β 受限链路按历史峰值判定"""
    topology, pathset, _ = _two_path_toy()
    history = DemandHistory(((1, DemandMatrix({(0, 2): 10.0})), (2, DemandMatrix({(0, 2): 30.0}))), 3)
    index = topology.link_index

    assert beta_constrained_links(topology, history, pathset, 0.5) == {index[(0, 2)], index[(1, 2)]}
    assert beta_constrained_links(topology, history, pathset, 0.6) == set(range(3))
    with pytest.raises(FormulationError):
        beta_constrained_links(topology, history, pathset, 0.0)


def test_dump_instance():
    """测试调试清单包含目标、二次项与约束行"""
    _, pathset, A = _two_path_toy()
    text = dump_instance(build_mt(DemandMatrix({(0, 2): 60.0}), pathset, A, 1.0))

    assert text.startswith("objective mt\nlambda 1.0\n")
    assert "  quadratic u[0] u[0] 2.0" in text
    assert "minimize offset 60.0" in text
    assert text.endswith("\n")


def test_solve_method_selection():
    """测试显式指定求解方法"""
    _, pathset, A = _two_path_toy()
    instance = build_mmlu(DemandMatrix({(0, 2): 60.0}), pathset, A, 0.0)
    solution = solve_instance(instance, method="simplex")

    assert solution.status == SolveStatus.OPTIMAL
    with pytest.raises(FormulationError):
        solve_instance(instance, method="barrier")


@pytest.mark.parametrize('seed', range(20))
def test_normalized_capacity_same_objective_random(seed):
    """测试随机 MT/MCF 实例归一化前后最优目标值一致"""
    topology = load_topology(os.path.join(DATA_DIR, 'ring7.json'))
    commodities = [(0, 4), (4, 0), (1, 5), (2, 6), (6, 3)]
    pathset = build_pathset(topology, commodities, 2)
    A = build_incidence(topology, pathset)
    rng = np.random.default_rng(seed)
    demands = DemandMatrix(dict(zip(commodities, rng.uniform(20.0, 160.0, len(commodities)).tolist())))
    objective = TEObjective.MT if seed % 2 == 0 else TEObjective.MCF
    instance = build_instance(objective, demands, pathset, A, default_lambda(objective))

    plain = solve_instance(instance)
    normalized = solve_instance(normalize_capacity(instance))

    assert plain.optimal and normalized.optimal
    assert normalized.objective_value == pytest.approx(plain.objective_value, rel=1e-6, abs=1e-6)
