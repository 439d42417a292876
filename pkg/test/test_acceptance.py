#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
GEANT 规模的验收检查（耗时较长，用 -m "not slow" 跳过）
"""
import os
import csv
import pytest
from config.run_config import apply_overrides, load_run_config
from core.experiment_manager import ExperimentManager, prepare, slice_candidates, validate_candidates
from core.formulation import build_mt
from core.stability import lipschitz_ratios, restart_spread


RUNS_DIR = os.path.join(os.path.dirname(__file__), '..', 'config', 'runs')

pytestmark = pytest.mark.slow


def _geant(tmp_path, name, iterations=2):
    config = load_run_config(os.path.join(RUNS_DIR, 'geant_mt.json'))
    return apply_overrides(config, iterations=iterations, out=str(tmp_path / name))


def test_geant_simulate_oracle_and_determinism(tmp_path):
    """测试 oracle 不溢出，且相同种子的输出逐字节一致"""
    outputs = []
    for name, threads in (('a', 1), ('b', 2)):
        config = _geant(tmp_path, name)
        summary = ExperimentManager(prepare(config), thread_count=threads).simulate()
        assert summary["rows"] == 4
        outputs.append((tmp_path / name / 'simulate.csv').read_bytes())

    assert outputs[0] == outputs[1]
    with open(tmp_path / 'a' / 'simulate.csv', 'r', encoding='utf-8') as f:
        rows = list(csv.DictReader(f))
    assert [row["method"] for row in rows] == ["safete", "lp", "safete", "lp"]
    for row in rows:
        if row["status"] == "optimal":
            assert abs(float(row["oracle_excess_flow_pct"])) <= 1e-9


def test_geant_divergence_reduction(tmp_path):
    """测试正则化方法的超额流量：均值不超过 0.1%，最坏情况不超过 LP 基线的五分之一"""
    summary = ExperimentManager(prepare(_geant(tmp_path, 'excess', iterations=20)), thread_count=4).simulate()

    assert summary["failed_rows"] == 0
    safete = summary["methods"]["safete"]["excess_flow_pct"]
    lp = summary["methods"]["lp"]["excess_flow_pct"]
    assert lp["max"] > 0
    assert safete["mean"] <= 0.1
    assert safete["max"] <= lp["max"] / 5


def test_geant_uniqueness_and_lipschitz(tmp_path):
    """测试 GEANT 正则化 MT 实例的唯一解与经验 Lipschitz 比值"""
    context = prepare(_geant(tmp_path, 'stability'))
    build = lambda demands, lam: build_mt(demands, context.pathset, context.incidence, lam)

    report = restart_spread(build(context.base, 1.0).problem, starts=10, seed=11)
    assert report.all_optimal
    assert report.spread <= 1e-4

    ratios = lipschitz_ratios(build, context.base, context.model, 1.0, pairs=10)
    assert ratios.qp.size > 0 and ratios.lp.size > 0
    assert ratios.regularized_smoother


def test_geant_lambda_insensitivity(tmp_path):
    """测试 λ 扫描中拥塞链路比例变化不超过两倍且始终低于 LP 基线"""
    context = prepare(_geant(tmp_path, 'sweep', iterations=5))
    summary = ExperimentManager(context, thread_count=4).lambda_sweep()

    assert [entry["lambda"] for entry in summary["sweep"]] == [0.0001, 0.01, 1.0]
    regularized = [entry["methods"]["safete"]["congested_frac"] for entry in summary["sweep"]]
    for entry, value in zip(summary["sweep"], regularized):
        assert value < entry["methods"]["lp"]["congested_frac"]
    # 比例的分辨率是一条链路
    assert max(regularized) <= 2 * min(regularized) + 1.0 / context.topology.link_count


def test_geant_slicing_candidates(tmp_path):
    """测试 GEANT 上 k=5 的候选方案至少 50 个且全部通过独立校验"""
    context = prepare(_geant(tmp_path, 'slice'), need_slicing=False)
    records = slice_candidates(context, workers=2)

    assert len(records) >= 50
    assert len({tuple(map(tuple, r["slices"])) for r in records}) == len(records)
    assert validate_candidates(context, str(tmp_path / 'slice' / 'candidates.json')) == []
    sources = [r["blast_radius_source"] for r in records]
    assert sources == sorted(sources)
    # 切片重量窗口上界 (1+ε)/k
    assert sources[0] <= 1.2 / 5 + 1e-9
    for record in records:
        assert record["blast_radius_transit"] >= record["blast_radius_source"] - 1e-12
