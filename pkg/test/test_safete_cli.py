#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试命令行入口
"""
import os
import json
import pytest
from unittest.mock import patch
from script.safete import build_parser, main


ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
RING7 = os.path.join(ROOT, 'config', 'runs', 'ring7.json')


def test_build_parser():
    """测试子命令与覆盖参数解析"""
    parser = build_parser()
    args = parser.parse_args(['lambda-sweep', RING7, '--lambdas', '0.01,1', '--seed', '7', '--lambda', '0.5'])

    assert args.command == 'lambda-sweep'
    assert args.lambdas == [0.01, 1.0]
    assert args.seed == 7
    assert args.lam == 0.5
    assert args.out is None

    args = parser.parse_args(['export-problem', RING7, 'out.txt', '--dump'])
    assert args.output == 'out.txt'
    assert args.dump


@pytest.mark.parametrize('argv', [
    [],
    ['maxflow', RING7],
    ['lambda-sweep', RING7, '--lambdas', '0.1,-1'],
    ['lambda-sweep', RING7, '--lambdas', 'a,b'],
])
def test_invalid_arguments(argv):
    """测试非法命令行参数"""
    with pytest.raises(SystemExit) as excinfo:
        build_parser().parse_args(argv)
    assert excinfo.value.code == 2


def test_missing_config_exit_code(tmp_path, capsys):
    """测试配置缺失时返回 2"""
    assert main(['simulate', str(tmp_path / 'missing.json')]) == 2
    assert "run config not found" in capsys.readouterr().out


def test_invalid_config_exit_code(tmp_path):
    """测试配置校验失败时返回 2"""
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({"topology": "t.json", "te": {"objective": "maxflow"}}))

    assert main(['simulate', str(path)]) == 2


def test_simulate_command(tmp_path):
    """测试 simulate 子命令写出报告"""
    out = tmp_path / 'out'
    assert main(['simulate', RING7, '--iterations', '1', '--out', str(out)]) == 0

    assert (out / 'simulate.csv').exists()
    assert (out / 'simulate_summary.json').exists()


def test_validate_slicing_command(tmp_path, capsys):
    """测试 validate-slicing 子命令的退出码"""
    good = os.path.join(ROOT, 'data', 'ring7_slicing.json')
    assert main(['validate-slicing', RING7, good, '--out', str(tmp_path)]) == 0

    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps({"slices": [[0, 4], [1, 2, 3, 5, 6]]}))
    assert main(['validate-slicing', RING7, str(bad), '--out', str(tmp_path)]) == 1
    assert "slice 0 is not connected" in capsys.readouterr().out


def test_export_problem_command(tmp_path):
    """测试 export-problem 子命令"""
    output = tmp_path / 'problem.txt'
    assert main(['export-problem', RING7, str(output), '--dump', '--out', str(tmp_path)]) == 0

    assert output.exists()
    assert (tmp_path / 'problem.txt.txt').exists()


def test_interrupted_experiment_exit_code(tmp_path, capsys):
    """测试实验被中断时返回 1"""
    with patch('script.safete.ExperimentManager.simulate', side_effect=KeyboardInterrupt):
        assert main(['simulate', RING7, '--out', str(tmp_path)]) == 1
    assert "interrupted" in capsys.readouterr().out


def test_failed_rows_exit_code(tmp_path):
    """测试存在失败行时返回 1"""
    with patch('script.safete.ExperimentManager.simulate', return_value={"failed_rows": 3}):
        assert main(['simulate', RING7, '--out', str(tmp_path)]) == 1
