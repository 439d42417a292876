#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验管理器模块
负责准备实验上下文，并用多线程工作池执行仿真、排列与 λ 扫描实验
"""

import os
import json
import math
import queue
import signal
import itertools
import threading
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from config.config_loader import config_loader
from core.decentral import (
    REPORT_COLUMNS, DivergenceReport, evaluate, oracle_solution, run_decentralized,
)
from core.errors import SafeTEError
from core.formulation import (
    PHANTOM_LAMBDA_RATIO, SCRATCH_RESERVE, TEObjective, beta_constrained_links, build_instance,
    divergence_free_links, dump_instance, solve_instance,
)
from core.netmodel import (
    DemandHistory, DemandMatrix, PerturbationModel, gravity_demands, load_demand_history, load_demand_matrix,
    load_deviations, load_topology, perturb, skewed_masses, top_fraction, uniform_masses,
)
from core.pathing import (
    add_phantom_edges, build_incidence, build_pathset, load_path_cache, restrict_pathset, save_path_cache,
)
from core.slicing import (
    SliceSpec, describe_candidates, generate_candidates, load_slicing, node_weights, random_candidates,
    random_partition, randomized_partition, save_candidates, validate_slicing,
)
from core.solver import export_problem
from log.logger import logger
from log.report_logger import ReportLogger


@dataclass(frozen=True)
class Method:
    """一种 TE 方法：正则化方法或基线"""
    name: str
    lam: float
    mask: frozenset = None
    reserve_fraction: float = 0.0
    incidence: object = None


@dataclass(eq=False)
class ExperimentContext:
    """实验上下文：所有工作项共享的只读输入"""
    config: object
    topology: object
    base: object
    history: object
    weights: object
    pathset: object
    incidence: object
    slicing: object = None
    model: object = None
    mask: frozenset = None
    method_cache: dict = field(default_factory=dict)
    warm_cache: dict = field(default_factory=dict)
    cache_lock: object = field(default_factory=threading.Lock)
    warm_lock: object = field(default_factory=threading.Lock)

    @property
    def objective(self):
        return self.config.te.objective

    def slice_spec(self):
        section = self.config.slicing
        return SliceSpec.build(self.weights, k=section.k, sizes=section.sizes, epsilon=section.epsilon,
                               max_retries=section.max_retries, seed=self.config.seed)

    def methods(self, lam):
        """正则化方法 + LP 基线（+ 预留容量基线），工作线程共享缓存"""
        with self.cache_lock:
            if lam in self.method_cache:
                return self.method_cache[lam]
            te = self.config.te
            regularized = self.incidence
            if te.phantom_edges and lam > 0:
                regularized, _ = add_phantom_edges(self.incidence, lam * PHANTOM_LAMBDA_RATIO)
            methods = [
                Method("safete", lam, self.mask, 0.0, regularized),
                Method("lp", 0.0, None, 0.0, self.incidence),
            ]
            if "scratch" in te.baselines:
                methods.append(Method("scratch", 0.0, None, SCRATCH_RESERVE, self.incidence))
            self.method_cache[lam] = methods
            return methods

    def warm_solution(self, method):
        """
        方法在基准需求上的解，作为各次迭代 QP 的热启动点

        只依赖基准需求，输出与工作项的执行顺序无关；LP 方法返回 None
        """
        if method.lam <= 0:
            return None
        key = (method.name, method.lam)
        with self.warm_lock:
            if key not in self.warm_cache:
                te = self.config.te
                instance = build_instance(te.objective, self.base, self.pathset, method.incidence, method.lam,
                                          method.mask, te.normalize_capacity, method.reserve_fraction)
                self.warm_cache[key] = solve_instance(instance, self.config.solver)
                logger.debug(f"{method.name} 基准解（λ={method.lam}）："
                             f"{self.warm_cache[key].status.value}", module="experiment_manager")
            return self.warm_cache[key]


def _load_demands(config, topology):
    section = config.demands
    history = None
    if section.source == "file":
        base = load_demand_matrix(section.path, topology)
    elif section.source == "history":
        history = load_demand_history(section.path, topology)
        base = history.mean_rates()
    else:
        if section.masses == "uniform":
            masses = uniform_masses(topology)
        elif section.masses == "skewed":
            masses = skewed_masses(topology, section.mass_seed)
        else:
            masses = dict(section.masses)
        base = gravity_demands(topology, masses, section.total_gbps)
    if section.top_fraction < 1:
        base = top_fraction(base, section.top_fraction)
    return base, history


def _load_pathset(config, topology, commodities, workers):
    paths = config.te.paths
    if paths.cache and os.path.exists(paths.cache):
        logger.info(f"使用路径缓存 {paths.cache}", module="experiment_manager")
        return restrict_pathset(load_path_cache(paths.cache, topology), commodities)
    pathset = build_pathset(topology, commodities, paths.k, paths.strategy, workers)
    if paths.cache:
        save_path_cache(pathset, paths.cache)
    return pathset


def _load_model(config):
    section = config.perturbation
    if section.kind == "empirical":
        return dataclasses.replace(load_deviations(section.path), seed=config.seed)
    return PerturbationModel("parametric", sigma=section.sigma, seed=config.seed)


def prepare(config, need_slicing=True, workers=1):
    """
    准备实验上下文

    Args:
        config (RunConfig): 实验配置
        need_slicing (bool): 是否构造切片与正则掩码
        workers (int): 路径计算线程数

    Returns:
        ExperimentContext: 上下文
    """
    topology = load_topology(config.topology)
    base, history = _load_demands(config, topology)
    commodities = [c for c, rate in base.items() if rate > 0]
    pathset = _load_pathset(config, topology, commodities, workers)
    incidence = build_incidence(topology, pathset)
    weights = node_weights(history if history is not None else base, config.slicing.weight_mode,
                           topology.node_count)
    context = ExperimentContext(config=config, topology=topology, base=base, history=history,
                                weights=weights, pathset=pathset, incidence=incidence)
    logger.info(f"拓扑 {topology.node_count} 节点 / {topology.link_count} 链路，"
                f"{len(commodities)} 个商品，总需求 {base.total():.6g} Gbps", module="experiment_manager")
    if not need_slicing:
        return context

    context.model = _load_model(config)
    context.slicing = _load_slicing(context)
    context.mask = _regularizer_mask(context)
    return context


def _load_slicing(context):
    section = context.config.slicing
    if section.source == "file":
        slicing = load_slicing(section.path)[0]
        slicing.check(context.topology)
        return slicing
    spec = context.slice_spec()
    if section.strategy == "random":
        slicing = random_partition(context.topology, spec)
    else:
        slicing = randomized_partition(context.topology, context.weights, spec)
    logger.info(f"切片配置：{slicing.to_list()}", module="experiment_manager")
    return slicing.canonical()


def _planning_history(context):
    """
    控制器规划时可能看到的全部需求：历史快照、基准需求与各次迭代的扰动矩阵
    """
    matrices = [matrix for _, matrix in context.history.snapshots] if context.history is not None else []
    matrices.append(context.base)
    for iteration in range(context.config.iterations):
        matrices.extend(perturb(context.base, context.model, context.slicing.k, stream=iteration))
    return DemandHistory(tuple(enumerate(matrices)), context.topology.node_count)


def _mlu_floor(context, history):
    """
    oracle MLU 的下界：逐商品取规划需求的最小值后求 MMLU

    oracle 的混合需求逐项不小于该下界需求，MLU 随需求单调不减
    """
    floor = DemandMatrix({
        commodity: min(matrix.rate(*commodity) for _, matrix in history.snapshots)
        for commodity in context.pathset.commodities
    })
    instance = build_instance(TEObjective.MMLU, floor, context.pathset, context.incidence, 0.0)
    solution = solve_instance(instance, context.config.solver)
    if not solution.optimal:
        logger.warning(f"MLU 下界求解未达最优（{solution.status.value}），β 剪枝退化为零阈值",
                       module="experiment_manager")
        return 0.0
    return max(solution.auxiliary, 0.0)


def _regularizer_mask(context):
    pruning = context.config.te.pruning
    objective = TEObjective(context.objective)
    mask = set(range(context.topology.link_count))
    if pruning.divergence_free:
        if objective == TEObjective.MMLU:
            # MMLU 以 oracle MLU 为拥塞阈值，独占链路上的 LP 解可升到控制器自己的 MLU 估计
            logger.warning("MMLU 目标不剪除无分歧链路", module="experiment_manager")
        else:
            mask -= divergence_free_links(context.topology, context.pathset, context.slicing)
    if pruning.beta is not None:
        history = _planning_history(context)
        threshold = pruning.beta
        if objective == TEObjective.MMLU:
            threshold *= _mlu_floor(context, history)
            logger.info(f"MMLU β 剪枝阈值 {threshold:.6g}", module="experiment_manager")
        if threshold > 0:
            mask -= beta_constrained_links(context.topology, history, context.pathset, threshold)
    if len(mask) < context.topology.link_count:
        logger.info(f"正则掩码保留 {len(mask)}/{context.topology.link_count} 条链路",
                    module="experiment_manager")
    return frozenset(mask)


def permutations(k, cap, seed):
    """
    k! 个矩阵分配：不超过上限时按字典序全部枚举，否则无放回均匀抽样 cap 个

    Args:
        k (int): 切片数
        cap (int): 上限
        seed (int): 随机种子

    Returns:
        list: 排列元组
    """
    if math.factorial(k) <= cap:
        return list(itertools.permutations(range(k)))
    rng = np.random.default_rng([int(seed), k])
    chosen = {}
    while len(chosen) < cap:
        candidate = tuple(int(v) for v in rng.permutation(k))
        chosen.setdefault(candidate, None)
    return list(chosen)


class ExperimentManager:
    """
    实验管理器类
    """

    def __init__(self, context, thread_count=None, progress=None):
        """
        初始化实验管理器

        Args:
            context (ExperimentContext): 实验上下文
            thread_count (int): 工作线程数，默认取并发配置
            progress (callable): 进度回调 progress(done, total)
        """
        concurrency_config = config_loader.get_concurrency_config()
        self.thread_count = thread_count or concurrency_config.get('thread_count', 4)
        self.context = context
        self.progress = progress

        # 任务队列
        self.task_queue = queue.Queue()
        self.threads = []

        # 结果按工作项序号合并
        self.results = {}
        self.next_flush = 0
        self.result_lock = threading.Lock()
        self.report_logger = None

        # 优雅终止标志
        self.exit_flag = False

        logger.info(f"实验管理器已初始化，并发线程数：{self.thread_count}", module="experiment_manager")

    def _signal_handler(self, signum, frame):
        """
        信号处理函数，用于捕获Ctrl+C信号
        """
        logger.info("接收到终止信号，正在优雅终止实验...", module="experiment_manager")
        self.exit_flag = True

        # 清空任务队列
        while not self.task_queue.empty():
            try:
                self.task_queue.get_nowait()
                self.task_queue.task_done()
            except queue.Empty:
                break

    def _solve_item(self, index, demands, lam, assignment=None):
        """
        一个工作项：所有方法在同一组切片需求上的去中心化运行与 oracle

        Returns:
            list: DivergenceReport 列表
        """
        ctx = self.context
        te = ctx.config.te
        settings = ctx.config.solver
        oracle = oracle_solution(ctx.topology, ctx.pathset, ctx.slicing, demands, te.objective,
                                 settings=settings, incidence=ctx.incidence, normalize=te.normalize_capacity)
        reports = []
        for method in ctx.methods(lam):
            run = run_decentralized(ctx.topology, ctx.pathset, ctx.slicing, demands, te.objective, method.lam,
                                    mask=method.mask, settings=settings, incidence=method.incidence,
                                    normalize=te.normalize_capacity, reserve_fraction=method.reserve_fraction,
                                    warm=ctx.warm_solution(method))
            reports.append(evaluate(run, oracle, ctx.topology, iteration=index, method=method.name,
                                    assignment=assignment))
        return reports

    def _failed_reports(self, index, lam, assignment=None):
        ctx = self.context
        return [DivergenceReport(iteration=index, method=method.name, objective=ctx.objective, lam=method.lam,
                                 k=ctx.slicing.k, status="failed", assignment=assignment)
                for method in ctx.methods(lam)]

    def worker(self):
        """
        工作线程函数
        """
        while True:
            if self.exit_flag:
                break
            try:
                task = self.task_queue.get(timeout=1)
            except queue.Empty:
                continue
            if task is None:
                self.task_queue.task_done()
                break

            position, index, job, fallback = task
            try:
                reports = job()
            except SafeTEError as e:
                logger.error(f"工作项 {index} 失败：{e}", module="experiment_manager")
                reports = fallback()
            except Exception as e:
                logger.error(f"工作项 {index} 异常：{str(e)}", module="experiment_manager")
                reports = fallback()
            self._store(position, reports)
            self.task_queue.task_done()

    def _store(self, position, reports):
        """保存结果并按序号顺序落盘"""
        with self.result_lock:
            self.results[position] = reports
            while self.next_flush in self.results:
                for report in self.results[self.next_flush]:
                    self.report_logger.log_report(report)
                self.next_flush += 1
            done = len(self.results)
        if self.progress:
            self.progress(done, self.total)

    def _execute(self, tasks, report_logger):
        """
        用工作池执行一组工作项

        Args:
            tasks (list): [(index, job, fallback)]
            report_logger (ReportLogger): 报告记录器

        Returns:
            list: 按工作项顺序展开的 DivergenceReport
        """
        self.results = {}
        self.next_flush = 0
        self.total = len(tasks)
        self.report_logger = report_logger
        self.threads = []

        in_main = threading.current_thread() is threading.main_thread()
        if in_main:
            previous = (signal.getsignal(signal.SIGINT), signal.getsignal(signal.SIGTERM))
            signal.signal(signal.SIGINT, self._signal_handler)
            signal.signal(signal.SIGTERM, self._signal_handler)
        try:
            for _ in range(min(self.thread_count, max(1, len(tasks)))):
                thread = threading.Thread(target=self.worker)
                thread.daemon = True
                thread.start()
                self.threads.append(thread)

            for position, task in enumerate(tasks):
                if self.exit_flag:
                    break
                self.task_queue.put((position, *task))
            for _ in self.threads:
                self.task_queue.put(None)
            for thread in self.threads:
                while thread.is_alive():
                    thread.join(timeout=1)
        finally:
            if in_main:
                signal.signal(signal.SIGINT, previous[0])
                signal.signal(signal.SIGTERM, previous[1])

        if self.exit_flag:
            raise KeyboardInterrupt("experiment interrupted")
        return [report for position in sorted(self.results) for report in self.results[position]]

    def _simulate_tasks(self, lam, offset=0):
        ctx = self.context
        tasks = []
        for iteration in range(ctx.config.iterations):
            demands = perturb(ctx.base, ctx.model, ctx.slicing.k, stream=iteration)
            index = offset + iteration
            tasks.append((index,
                          lambda d=demands, i=index: self._solve_item(i, d, lam),
                          lambda i=index: self._failed_reports(i, lam)))
        return tasks

    def simulate(self):
        """
        仿真实验：每次迭代生成 k 份扰动需求，正则化方法与基线各输出一行

        Returns:
            dict: 汇总
        """
        ctx = self.context
        lam = ctx.config.te.effective_lambda
        report_logger = ReportLogger(ctx.config.output_dir, "simulate")
        logger.info(f"开始仿真：{ctx.config.iterations} 次迭代，k={ctx.slicing.k}，λ={lam:g}",
                    module="experiment_manager")
        self._execute(self._simulate_tasks(lam), report_logger)
        return report_logger.generate_summary({"slicing": ctx.slicing.to_list()})

    def permute(self):
        """
        排列实验：固定 k 份扰动矩阵，遍历其到切片的分配

        Returns:
            dict: 汇总
        """
        ctx = self.context
        lam = ctx.config.te.effective_lambda
        matrices = perturb(ctx.base, ctx.model, ctx.slicing.k, stream=0)
        assignments = permutations(ctx.slicing.k, ctx.config.permute.cap, ctx.config.seed)
        tasks = []
        for index, assignment in enumerate(assignments):
            demands = [matrices[j] for j in assignment]
            tasks.append((index,
                          lambda d=demands, i=index, a=assignment: self._solve_item(i, d, lam, a),
                          lambda i=index, a=assignment: self._failed_reports(i, lam, a)))
        columns = REPORT_COLUMNS + ["assignment"]
        report_logger = ReportLogger(ctx.config.output_dir, "permute", columns)
        logger.info(f"开始排列实验：{len(assignments)} 种分配", module="experiment_manager")
        self._execute(tasks, report_logger)
        return report_logger.generate_summary({"slicing": ctx.slicing.to_list()})

    def lambda_sweep(self, lambdas=None):
        """
        λ 扫描：每个 λ 一个仿真块，写入同一 CSV，并输出 lambda_sweep.json

        Args:
            lambdas (list): λ 列表，默认取配置

        Returns:
            dict: 每个 λ 下各方法的平均拥塞链路比例与有效吞吐
        """
        ctx = self.context
        lambdas = list(lambdas or ctx.config.lambda_sweep or [ctx.config.te.effective_lambda])
        report_logger = ReportLogger(ctx.config.output_dir, "lambda_sweep_rows")
        tasks = []
        for block, lam in enumerate(lambdas):
            tasks.extend(self._simulate_tasks(lam, offset=block * ctx.config.iterations))
        reports = self._execute(tasks, report_logger)
        report_logger.generate_summary()

        sweep = []
        per_block = ctx.config.iterations
        for block, lam in enumerate(lambdas):
            chunk = [r for r in reports if block * per_block <= r.iteration < (block + 1) * per_block]
            methods = {}
            for name in sorted({r.method for r in chunk}):
                ok = [r for r in chunk if r.method == name and not r.failed]
                methods[name] = {
                    "congested_frac": float(np.mean([r.congested_frac for r in ok])) if ok else None,
                    "effective_throughput": float(np.mean([r.effective_throughput for r in ok])) if ok else None,
                    "failed": sum(1 for r in chunk if r.method == name and r.failed),
                }
            sweep.append({"lambda": lam, "methods": methods})
        summary = {"objective": ctx.objective.value, "sweep": sweep}
        with open(os.path.join(ctx.config.output_dir, "lambda_sweep.json"), 'w', encoding='utf-8') as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write('\n')
        summary["failed_rows"] = report_logger.failed
        return summary


def slice_candidates(context, workers=1):
    """
    生成切片候选方案并写入 candidates.json（按源爆炸半径升序）

    Args:
        context (ExperimentContext): 上下文（无需切片）
        workers (int): 并行线程数

    Returns:
        list: 候选方案描述
    """
    config = context.config
    spec = context.slice_spec()
    if config.slicing.strategy == "random":
        configs, failures = random_candidates(context.topology, spec, config.slicing.candidates, workers)
    else:
        configs, failures = generate_candidates(context.topology, context.weights, spec,
                                                config.slicing.candidates, workers)
    if not configs:
        logger.warning(f"未找到可行切片（ε={spec.epsilon}），失败统计 {failures}", module="experiment_manager")
    records = describe_candidates(configs, context.weights, context.base, context.pathset)
    os.makedirs(config.output_dir, exist_ok=True)
    save_candidates(records, os.path.join(config.output_dir, "candidates.json"))
    return records


def validate_candidates(context, path):
    """
    独立校验切片文件中的每个方案

    Args:
        context (ExperimentContext): 上下文
        path (str): 切片文件

    Returns:
        list: [(序号, 违规列表)]，只包含未通过的方案
    """
    section = context.config.slicing
    problems = []
    for index, config in enumerate(load_slicing(path)):
        # 未指定 k 时按方案自身的切片数生成最均匀的大小要求
        spec = SliceSpec.build(context.weights, k=section.k or config.k, sizes=section.sizes,
                               epsilon=section.epsilon)
        violations = validate_slicing(context.topology, config, context.weights, spec)
        if violations:
            problems.append((index, violations))
            logger.warning(f"方案 {index} 未通过校验：{violations}", module="experiment_manager")
    return problems


def export_base_problem(context, path, dump=False):
    """
    导出基准（未扰动）需求下正则化方法的问题文件

    Args:
        context (ExperimentContext): 上下文
        path (str): 输出文件
        dump (bool): 同时写出 <path>.txt 调试清单

    Returns:
        TEInstance: 导出的实例
    """
    te = context.config.te
    lam = te.effective_lambda
    method = context.methods(lam)[0]
    instance = build_instance(te.objective, context.base, context.pathset, method.incidence, lam,
                              mask=context.mask, normalize=te.normalize_capacity)
    export_problem(instance.problem, path)
    if dump:
        with open(f"{path}.txt", 'w', encoding='utf-8') as f:
            f.write(dump_instance(instance))
    logger.info(f"问题已导出到 {path}（{instance.problem.n} 变量，{instance.problem.m} 约束）",
                module="experiment_manager")
    return instance
