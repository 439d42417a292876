#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
求解器模块
提供两类内置求解器：
1. 确定性修正单纯形法（LP 基线，返回顶点解）
2. 算子分裂（ADMM）二次规划求解器，带 Ruiz 均衡、自适应 rho 与活动集抛光
以及 KKT 残差、正则项 Hessian 与问题文件导入导出等校验工具

统一问题形式：
    minimize    ½ xᵀPx + qᵀx + offset
    subject to  g_lower ≤ Gx ≤ g_upper,  x_lower ≤ x ≤ x_upper
"""

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import SolverError
from config.config_loader import config_loader
from log.logger import logger


RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_SCALE = 1e3
# 残差比超出 [1/RHO_RATIO_GATE, RHO_RATIO_GATE] 才更新 rho
RHO_RATIO_GATE = 10.0
MIN_SCALING = 1e-4
MAX_SCALING = 1e4

# 单纯形法数值容差
PIVOT_TOL = 1e-9
RATIO_TOL = 1e-12
REDUCED_COST_TOL = 1e-9

# 活动集重猜时判定约束贴界的相对容差带
POLISH_BANDS = (1e-9, 1e-7, 1e-5, 1e-3)

EXPORT_MAGIC = "safete-problem v1"


class SolverSettings(BaseModel):
    """求解器参数，未给出的字段取 config.yaml 的 solver 段"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    eps_abs: float = Field(1e-8, gt=0)
    eps_rel: float = Field(1e-8, ge=0)
    eps_prim_inf: float = Field(1e-6, gt=0)
    eps_dual_inf: float = Field(1e-6, gt=0)
    max_iter: int = Field(200000, ge=1)
    rho: float = Field(0.1, gt=0)
    sigma: float = Field(1e-6, gt=0)
    alpha: float = Field(1.6, gt=0, lt=2)
    adaptive_rho: bool = True
    adaptive_rho_interval: int = Field(50, ge=1)
    check_interval: int = Field(25, ge=1)
    polish: bool = True
    polish_interval: int = Field(50, ge=1)
    polish_delta: float = Field(1e-6, gt=0)
    polish_refine_iter: int = Field(3, ge=0)
    polish_retry_interval: int = Field(500, ge=1)
    scaling_iters: int = Field(10, ge=0)
    simplex_max_iter: int = Field(50000, ge=1)
    simplex_refactor: int = Field(100, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _merge_config_defaults(cls, data):
        if data is None:
            data = {}
        if isinstance(data, dict):
            return {**config_loader.get_solver_config(), **data}
        return data


class SolveStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True, eq=False)
class StandardProblem:
    """凸二次规划的规范形式，覆盖三种 TE 目标"""
    P: object
    q: np.ndarray
    G: object
    g_lower: np.ndarray
    g_upper: np.ndarray
    x_lower: np.ndarray
    x_upper: np.ndarray
    offset: float = 0.0
    names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).ravel()
        n = q.size
        P = sp.csc_matrix(self.P, dtype=float) if self.P is not None else sp.csc_matrix((n, n))
        G = sp.csr_matrix(self.G, dtype=float) if self.G is not None else sp.csr_matrix((0, n))
        object.__setattr__(self, 'q', q)
        object.__setattr__(self, 'P', P)
        object.__setattr__(self, 'G', G)
        for name in ('g_lower', 'g_upper', 'x_lower', 'x_upper'):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())

        if P.shape != (n, n):
            raise SolverError(f"P has shape {P.shape}, expected {(n, n)}")
        if G.shape[1] != n:
            raise SolverError(f"G has {G.shape[1]} columns, expected {n}")
        m = G.shape[0]
        if self.g_lower.size != m or self.g_upper.size != m:
            raise SolverError("row bound vectors do not match the number of rows of G")
        if self.x_lower.size != n or self.x_upper.size != n:
            raise SolverError("variable bound vectors do not match the number of variables")
        if np.isnan(q).any() or np.isnan(P.data).any() or np.isnan(G.data).any():
            raise SolverError("problem data contains NaN")
        asymmetry = abs(P - P.T)
        if asymmetry.nnz and asymmetry.max() > 1e-12:
            raise SolverError("P is not symmetric")

    @property
    def n(self):
        return self.q.size

    @property
    def m(self):
        return self.G.shape[0]

    @property
    def is_linear(self):
        return self.P.nnz == 0 or not np.any(self.P.data)

    @cached_property
    def constraint_matrix(self):
        """Ā = [G; I]"""
        return sp.vstack([self.G, sp.identity(self.n, format='csr')], format='csc')

    @property
    def lower_bounds(self):
        return np.concatenate([self.g_lower, self.x_lower])

    @property
    def upper_bounds(self):
        return np.concatenate([self.g_upper, self.x_upper])

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.offset)


@dataclass(eq=False)
class SolveResult:
    """求解结果；duals 对应 Ā = [G; I] 的各行"""
    x: np.ndarray
    status: SolveStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    objective_value: float
    duals: np.ndarray = None
    method: str = ""
    polished: bool = False

    @property
    def optimal(self):
        return self.status == SolveStatus.OPTIMAL


def _resolve_settings(settings):
    if settings is None:
        return SolverSettings()
    if isinstance(settings, dict):
        return SolverSettings(**settings)
    return settings


# ---------------------------------------------------------------------------
# 单纯形法
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class _StandardForm:
    """min cᵀx' s.t. A x' = b, x' ≥ 0，及其到原变量的映射 x = shift + T x'"""
    A: object
    b: np.ndarray
    cost: np.ndarray
    structural: int
    artificial: np.ndarray
    basis: np.ndarray
    T: object
    shift: np.ndarray
    flips: np.ndarray
    row_origin: np.ndarray
    infeasible: bool = False


def _to_standard_form(problem):
    n, m = problem.n, problem.m
    t_rows, t_cols, t_vals = [], [], []
    shift = np.zeros(n)
    bound_rows = []
    ncol = 0
    infeasible = False
    for j in range(n):
        lo, hi = problem.x_lower[j], problem.x_upper[j]
        if np.isfinite(lo):
            shift[j] = lo
            t_rows.append(j)
            t_cols.append(ncol)
            t_vals.append(1.0)
            if np.isfinite(hi):
                if hi < lo:
                    infeasible = True
                bound_rows.append((ncol, hi - lo))
            ncol += 1
        elif np.isfinite(hi):
            shift[j] = hi
            t_rows.append(j)
            t_cols.append(ncol)
            t_vals.append(-1.0)
            ncol += 1
        else:
            t_rows += [j, j]
            t_cols += [ncol, ncol + 1]
            t_vals += [1.0, -1.0]
            ncol += 2
    T = sp.csr_matrix((t_vals, (t_rows, t_cols)), shape=(n, ncol))
    GT = (problem.G @ T).tocsr()
    base = problem.G @ shift

    selected, senses, rhs, origin = [], [], [], []
    for i in range(m):
        lo, hi = problem.g_lower[i], problem.g_upper[i]
        if np.isfinite(lo) and np.isfinite(hi) and lo > hi:
            infeasible = True
        if np.isfinite(lo) and np.isfinite(hi) and lo == hi:
            selected.append(i)
            senses.append(0)
            rhs.append(lo - base[i])
            origin.append(i)
            continue
        if np.isfinite(lo):
            selected.append(i)
            senses.append(-1)
            rhs.append(lo - base[i])
            origin.append(i)
        if np.isfinite(hi):
            selected.append(i)
            senses.append(1)
            rhs.append(hi - base[i])
            origin.append(i)

    blocks = [GT[selected]] if selected else []
    if bound_rows:
        rows = np.arange(len(bound_rows))
        cols = [c for c, _ in bound_rows]
        blocks.append(sp.csr_matrix((np.ones(len(bound_rows)), (rows, cols)),
                                    shape=(len(bound_rows), ncol)))
        senses += [1] * len(bound_rows)
        rhs += [v for _, v in bound_rows]
        origin += [-1] * len(bound_rows)
    rows_total = len(rhs)
    R = sp.vstack(blocks, format='csr') if blocks else sp.csr_matrix((0, ncol))

    rhs = np.array(rhs, dtype=float)
    senses = np.array(senses, dtype=float)
    flips = np.ones(rows_total)
    # 松弛变量系数：≤ 行 +1，≥ 行 -1，等式行无松弛
    slack_coef = senses.copy()
    flip = (rhs < 0) | ((rhs == 0) & (slack_coef == -1))
    flips[flip] = -1.0
    rhs = rhs * flips
    slack_coef = slack_coef * flips

    slack_rows = np.flatnonzero(slack_coef != 0)
    S = sp.csr_matrix((slack_coef[slack_rows], (slack_rows, np.arange(slack_rows.size))),
                      shape=(rows_total, slack_rows.size))
    needs_artificial = np.flatnonzero(slack_coef != 1)
    Art = sp.csr_matrix((np.ones(needs_artificial.size), (needs_artificial, np.arange(needs_artificial.size))),
                        shape=(rows_total, needs_artificial.size))
    A = sp.hstack([sp.diags(flips) @ R, S, Art], format='csc')

    basis = np.empty(rows_total, dtype=int)
    slack_start = ncol
    art_start = ncol + slack_rows.size
    for position, row in enumerate(slack_rows):
        if slack_coef[row] == 1:
            basis[row] = slack_start + position
    for position, row in enumerate(needs_artificial):
        basis[row] = art_start + position

    total = A.shape[1]
    artificial = np.zeros(total, dtype=bool)
    artificial[art_start:] = True
    cost = np.zeros(total)
    cost[:ncol] = T.T @ problem.q

    return _StandardForm(A=A, b=rhs, cost=cost, structural=ncol, artificial=artificial,
                         basis=basis, T=T, shift=shift, flips=flips,
                         row_origin=np.array(origin, dtype=int), infeasible=infeasible)


class _RevisedSimplex:
    """稠密显式基逆的修正单纯形法，Dantzig 入基、字典序出基"""

    def __init__(self, form, settings):
        self.A = form.A
        self.b = form.b
        self.basis = form.basis.copy()
        self.settings = settings
        self.binv = np.eye(self.b.size)
        self.x_b = self.b.copy()
        self.iterations = 0
        self.since_refactor = 0

    def refactor(self):
        B = self.A[:, self.basis].toarray()
        self.binv = np.linalg.inv(B)
        self.x_b = self.binv @ self.b
        self.x_b[(self.x_b < 0) & (self.x_b > -1e-11)] = 0.0
        self.since_refactor = 0

    def leaving_row(self, alpha):
        rows = np.flatnonzero(alpha > PIVOT_TOL)
        if rows.size == 0:
            return None
        ratios = np.maximum(self.x_b[rows], 0.0) / alpha[rows]
        best = ratios.min()
        rows = rows[ratios <= best + RATIO_TOL * max(1.0, abs(best))]
        column = 0
        while rows.size > 1 and column < self.binv.shape[1]:
            values = self.binv[rows, column] / alpha[rows]
            rows = rows[values <= values.min() + RATIO_TOL]
            column += 1
        return int(rows[0])

    def pivot(self, entering, row, alpha):
        theta = self.x_b[row] / alpha[row]
        self.x_b -= theta * alpha
        self.x_b[row] = theta
        pivot_row = self.binv[row] / alpha[row]
        self.binv -= np.outer(alpha, pivot_row)
        self.binv[row] = pivot_row
        self.basis[row] = entering
        self.iterations += 1
        self.since_refactor += 1

    def run(self, cost, allowed):
        """
        以给定成本向量迭代至最优

        Returns:
            SolveStatus: optimal / unbounded / iteration_limit
        """
        tol = REDUCED_COST_TOL * max(1.0, np.abs(cost).max(initial=0.0))
        while True:
            if self.iterations >= self.settings.simplex_max_iter:
                return SolveStatus.ITERATION_LIMIT
            if self.since_refactor >= self.settings.simplex_refactor:
                self.refactor()
            duals = cost[self.basis] @ self.binv
            reduced = cost - self.A.T @ duals
            reduced[~allowed] = np.inf
            reduced[self.basis] = np.inf
            entering = int(np.argmin(reduced))
            if reduced[entering] >= -tol:
                return SolveStatus.OPTIMAL
            alpha = self.binv @ self.A[:, entering].toarray().ravel()
            row = self.leaving_row(alpha)
            if row is None:
                return SolveStatus.UNBOUNDED
            self.pivot(entering, row, alpha)

    def drive_out_artificials(self, artificial):
        """Phase I 结束后将零水平的人工变量换出基"""
        for row in range(self.basis.size):
            if not artificial[self.basis[row]]:
                continue
            tableau_row = self.A.T @ self.binv[row]
            candidates = np.flatnonzero((np.abs(tableau_row) > PIVOT_TOL) & ~artificial)
            candidates = candidates[~np.isin(candidates, self.basis)]
            if candidates.size == 0:
                # 冗余行，人工变量留在基中且恒为 0
                continue
            entering = int(candidates[0])
            alpha = self.binv @ self.A[:, entering].toarray().ravel()
            self.pivot(entering, row, alpha)

    def values(self):
        values = np.zeros(self.A.shape[1])
        values[self.basis] = self.x_b
        return values


def solve_lp_simplex(problem, settings=None):
    """
    两阶段修正单纯形法求解 LP，返回基本可行（顶点）解

    Args:
        problem (StandardProblem): P 必须为零
        settings (SolverSettings): 求解参数

    Returns:
        SolveResult: 求解结果
    """
    settings = _resolve_settings(settings)
    if not problem.is_linear:
        raise SolverError("simplex requires a zero quadratic term")

    form = _to_standard_form(problem)
    if form.infeasible:
        return _failed_result(problem, SolveStatus.INFEASIBLE, 0, "simplex")

    engine = _RevisedSimplex(form, settings)
    everything = np.ones(form.A.shape[1], dtype=bool)

    if form.artificial.any():
        phase_one = form.artificial.astype(float)
        status = engine.run(phase_one, everything)
        if status == SolveStatus.ITERATION_LIMIT:
            return _failed_result(problem, status, engine.iterations, "simplex")
        engine.refactor()
        infeasibility = float(phase_one[engine.basis] @ engine.x_b)
        if infeasibility > 1e-8 * max(1.0, np.abs(form.b).max(initial=0.0)):
            logger.debug(f"单纯形 Phase I 残余不可行量 {infeasibility:.3e}", module="solver")
            return _failed_result(problem, SolveStatus.INFEASIBLE, engine.iterations, "simplex")
        engine.drive_out_artificials(form.artificial)

    phase_two = form.cost.copy()
    status = engine.run(phase_two, ~form.artificial)
    engine.refactor()

    structural = np.maximum(engine.values()[:form.structural], 0.0)
    x = form.shift + form.T @ structural

    duals_std = phase_two[engine.basis] @ engine.binv
    y_g = np.zeros(problem.m)
    for row, origin in enumerate(form.row_origin):
        if origin >= 0:
            y_g[origin] -= form.flips[row] * duals_std[row]
    y_x = -(problem.q + problem.G.T @ y_g)
    duals = np.concatenate([y_g, y_x])

    primal, dual, _ = kkt_residuals(problem, x, duals)
    return SolveResult(x=x, status=status, iterations=engine.iterations,
                       primal_residual=primal, dual_residual=dual,
                       objective_value=problem.objective(x), duals=duals, method="simplex")


def _failed_result(problem, status, iterations, method):
    x = np.zeros(problem.n)
    return SolveResult(x=x, status=status, iterations=iterations,
                       primal_residual=float('inf'), dual_residual=float('inf'),
                       objective_value=float('nan'), duals=np.zeros(problem.m + problem.n),
                       method=method)


# ---------------------------------------------------------------------------
# 算子分裂 QP 求解器
# ---------------------------------------------------------------------------

def _col_inf_norm(M):
    if M.shape[0] == 0 or M.nnz == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_inf_norm(M):
    if M.shape[1] == 0 or M.nnz == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


def _limit(values):
    values = np.asarray(values, dtype=float).copy()
    values[values < MIN_SCALING] = 1.0
    return np.minimum(values, MAX_SCALING)


def _inf_norm(v):
    return float(np.max(np.abs(v))) if v.size else 0.0


class _OperatorSplitting:
    """ADMM 工作区：缩放后的问题数据、rho 向量与 KKT 分解"""

    def __init__(self, problem, settings):
        self.settings = settings
        self.n = problem.n
        self.P0 = problem.P
        self.q0 = problem.q
        self.A0 = problem.constraint_matrix
        self.l0 = problem.lower_bounds
        self.u0 = problem.upper_bounds
        self.m = self.A0.shape[0]
        self.eq_rows = np.isfinite(self.l0) & np.isfinite(self.u0) & (self.l0 == self.u0)
        self.free_rows = ~np.isfinite(self.l0) & ~np.isfinite(self.u0)
        self._scale()
        self.rho = settings.rho
        self.rho_vec = self._rho_vector(self.rho)
        self._factorize()

    def _scale(self):
        P = self.P0.tocsc(copy=True)
        q = self.q0.copy()
        A = self.A0.tocsc(copy=True)
        D = np.ones(self.n)
        E = np.ones(self.m)
        c = 1.0
        for _ in range(self.settings.scaling_iters):
            d = 1.0 / np.sqrt(_limit(np.maximum(_col_inf_norm(P), _col_inf_norm(A))))
            e = 1.0 / np.sqrt(_limit(_row_inf_norm(A)))
            Dt, Et = sp.diags(d), sp.diags(e)
            P = (Dt @ P @ Dt).tocsc()
            A = (Et @ A @ Dt).tocsc()
            q = d * q
            D *= d
            E *= e
            cost = max(float(np.mean(_col_inf_norm(P))), _inf_norm(q))
            gamma = 1.0 / float(_limit([cost])[0])
            P = P * gamma
            q = q * gamma
            c *= gamma
        self.P, self.q, self.A = P.tocsc(), q, A.tocsc()
        self.At = self.A.T.tocsc()
        self.D, self.E, self.c = D, E, c
        self.l = np.where(np.isfinite(self.l0), self.l0 * E, -np.inf)
        self.u = np.where(np.isfinite(self.u0), self.u0 * E, np.inf)

    def _rho_vector(self, rho):
        vec = np.full(self.m, rho)
        vec[self.eq_rows] = rho * RHO_EQ_SCALE
        vec[self.free_rows] = RHO_MIN
        return np.clip(vec, RHO_MIN, RHO_MAX)

    def _factorize(self):
        kkt = sp.bmat([
            [self.P + self.settings.sigma * sp.identity(self.n), self.At],
            [self.A, -sp.diags(1.0 / self.rho_vec)],
        ], format='csc')
        self.lu = spla.splu(kkt)

    def residuals(self, x, z, y):
        """返回未缩放的 (原始残差, 对偶残差, 原始容差, 对偶容差)"""
        s = self.settings
        Ax = self.A @ x
        primal = _inf_norm((Ax - z) / self.E)
        eps_primal = s.eps_abs + s.eps_rel * max(_inf_norm(Ax / self.E), _inf_norm(z / self.E))
        Px = self.P @ x
        Aty = self.At @ y
        dual = _inf_norm((Px + self.q + Aty) / self.D) / self.c
        eps_dual = s.eps_abs + s.eps_rel * max(
            _inf_norm(Px / self.D), _inf_norm(Aty / self.D), _inf_norm(self.q / self.D)) / self.c
        return primal, dual, eps_primal, eps_dual

    def primal_infeasible(self, dy):
        tol = self.settings.eps_prim_inf
        direction = self.E * dy
        norm = _inf_norm(direction)
        if norm <= tol:
            return False
        if _inf_norm((self.At @ dy) / self.D) >= tol * norm:
            return False
        positive = np.maximum(direction, 0.0)
        negative = np.minimum(direction, 0.0)
        finite_u = np.isfinite(self.u0)
        finite_l = np.isfinite(self.l0)
        if np.any(positive[~finite_u] > tol * norm) or np.any(negative[~finite_l] < -tol * norm):
            return False
        support = self.u0[finite_u] @ positive[finite_u] + self.l0[finite_l] @ negative[finite_l]
        return support < -tol * norm

    def dual_infeasible(self, dx):
        tol = self.settings.eps_dual_inf
        direction = self.D * dx
        norm = _inf_norm(direction)
        if norm <= tol:
            return False
        bound = tol * norm
        if self.q0 @ direction >= -bound:
            return False
        if _inf_norm(self.P0 @ direction) > bound:
            return False
        image = self.A0 @ direction
        if np.any(image[np.isfinite(self.u0)] > bound):
            return False
        if np.any(image[np.isfinite(self.l0)] < -bound):
            return False
        return True

    def adapt_rho(self, x, z, y):
        Ax = self.A @ x
        Px = self.P @ x
        Aty = self.At @ y
        primal = _inf_norm(Ax - z) / max(_inf_norm(Ax), _inf_norm(z), 1e-30)
        dual = _inf_norm(Px + self.q + Aty) / max(_inf_norm(Px), _inf_norm(Aty), _inf_norm(self.q), 1e-30)
        ratio = primal / max(dual, 1e-30)
        if 1.0 / RHO_RATIO_GATE <= ratio <= RHO_RATIO_GATE:
            return False
        candidate = float(np.clip(self.rho * np.sqrt(ratio), RHO_MIN, RHO_MAX))
        if candidate == self.rho:
            return False
        self.rho = candidate
        self.rho_vec = self._rho_vector(candidate)
        self._factorize()
        return True

    def _active_sets(self, z, y, retry):
        """活动集猜测：先按 z 与 y 的相对位置，重猜时再按容差带逐级放宽"""
        lower = (z - self.l < -y) & ~self.eq_rows
        upper = (self.u - z < y) & ~self.eq_rows & ~lower
        yield lower, upper
        if not retry:
            return
        finite_l = np.isfinite(self.l) & ~self.eq_rows
        finite_u = np.isfinite(self.u) & ~self.eq_rows
        scale = max(1.0, _inf_norm(y))
        for band in POLISH_BANDS:
            with np.errstate(invalid='ignore'):
                near_l = finite_l & ((z - self.l <= band * (1.0 + np.abs(self.l))) | (y < -band * scale))
                near_u = finite_u & ((self.u - z <= band * (1.0 + np.abs(self.u))) | (y > band * scale))
            # 上下界同时贴近时按乘子符号归类
            lower = near_l & ~(near_u & (y > 0))
            upper = near_u & ~lower
            yield lower, upper

    def _polish_with(self, lower, upper):
        s = self.settings
        active = lower | upper | self.eq_rows
        index = np.flatnonzero(active)
        target = np.where(upper[index], self.u[index], self.l[index])
        A_red = self.A[index]
        size = index.size
        if size:
            regularized = sp.bmat([
                [self.P + s.polish_delta * sp.identity(self.n), A_red.T],
                [A_red, -s.polish_delta * sp.identity(size)],
            ], format='csc')
            exact = sp.bmat([
                [self.P, A_red.T],
                [A_red, sp.csc_matrix((size, size))],
            ], format='csc')
        else:
            regularized = (self.P + s.polish_delta * sp.identity(self.n)).tocsc()
            exact = self.P
        rhs = np.concatenate([-self.q, target])
        try:
            lu = spla.splu(regularized)
        except (RuntimeError, ValueError):
            return None
        solution = lu.solve(rhs)
        for _ in range(s.polish_refine_iter):
            solution = solution + lu.solve(rhs - exact @ solution)
        if not np.all(np.isfinite(solution)):
            return None

        x = solution[:self.n]
        y_new = np.zeros(self.m)
        y_new[index] = solution[self.n:]
        # 退化的贴界约束乘子可能略带错号，投影后由对偶残差判定
        y_new[lower] = np.minimum(y_new[lower], 0.0)
        y_new[upper] = np.maximum(y_new[upper], 0.0)
        z_new = self.A @ x
        violation = np.maximum(z_new - self.u, 0.0) + np.maximum(self.l - z_new, 0.0)
        primal = _inf_norm(violation / self.E)
        z_new = np.clip(z_new, self.l, self.u)
        _, dual, eps_primal, eps_dual = self.residuals(x, z_new, y_new)
        if primal > eps_primal or dual > eps_dual:
            return None
        return x, z_new, y_new

    def polish(self, z, y, retry=False):
        """
        活动集抛光：求解正则化的约简 KKT 系统并做迭代精化

        Args:
            z (np.ndarray): 缩放空间中的 z
            y (np.ndarray): 缩放空间中的乘子
            retry (bool): 首个猜测失败时按容差带重猜活动集

        Returns:
            tuple: (x, z, y) 缩放空间中的抛光解，失败时为 None
        """
        tried = set()
        for lower, upper in self._active_sets(z, y, retry):
            key = (lower.tobytes(), upper.tobytes())
            if key in tried:
                continue
            tried.add(key)
            candidate = self._polish_with(lower, upper)
            if candidate is not None:
                return candidate
        return None

    def unscale(self, x, y):
        return self.D * x, self.E * y / self.c


def solve_qp(problem, settings=None, initial_x=None, initial_y=None):
    """
    算子分裂（ADMM）求解凸二次规划

    Args:
        problem (StandardProblem): P 半正定
        settings (SolverSettings): 求解参数
        initial_x (np.ndarray): 初始迭代点（默认从零冷启动）
        initial_y (np.ndarray): 初始乘子，对应 Ā = [G; I] 各行（热启动用）

    Returns:
        SolveResult: 求解结果
    """
    s = _resolve_settings(settings)
    work = _OperatorSplitting(problem, s)
    n, m = work.n, work.m

    if initial_x is not None:
        initial_x = np.asarray(initial_x, dtype=float).ravel()
        if initial_x.size != n:
            raise SolverError(f"initial iterate has length {initial_x.size}, expected {n}")
        x = initial_x / work.D
        z = np.clip(work.A @ x, work.l, work.u)
    else:
        x = np.zeros(n)
        z = np.clip(np.zeros(m), work.l, work.u)
    if initial_y is not None:
        initial_y = np.asarray(initial_y, dtype=float).ravel()
        if initial_y.size != m:
            raise SolverError(f"initial duals have length {initial_y.size}, expected {m}")
        y = initial_y * work.c / work.E
    else:
        y = np.zeros(m)

    status = SolveStatus.ITERATION_LIMIT
    polished = False
    primal = dual = float('inf')
    iteration = 0

    for iteration in range(1, s.max_iter + 1):
        x_prev, y_prev = x, y
        rhs = np.concatenate([s.sigma * x - work.q, z - y / work.rho_vec])
        solution = work.lu.solve(rhs)
        x_tilde = solution[:n]
        z_tilde = z + (solution[n:] - y) / work.rho_vec
        x = s.alpha * x_tilde + (1.0 - s.alpha) * x_prev
        z_relaxed = s.alpha * z_tilde + (1.0 - s.alpha) * z
        z_next = np.clip(z_relaxed + y / work.rho_vec, work.l, work.u)
        y = y + work.rho_vec * (z_relaxed - z_next)
        z = z_next

        if iteration % s.check_interval == 0 or iteration == s.max_iter:
            primal, dual, eps_primal, eps_dual = work.residuals(x, z, y)
            if primal <= eps_primal and dual <= eps_dual:
                status = SolveStatus.OPTIMAL
                break
            if work.primal_infeasible(y - y_prev):
                status = SolveStatus.INFEASIBLE
                break
            if work.dual_infeasible(x - x_prev):
                status = SolveStatus.UNBOUNDED
                break

        if s.polish and iteration % s.polish_interval == 0:
            candidate = work.polish(z, y, retry=iteration % s.polish_retry_interval == 0)
            if candidate is not None:
                x, z, y = candidate
                primal, dual, _, _ = work.residuals(x, z, y)
                status = SolveStatus.OPTIMAL
                polished = True
                break

        if s.adaptive_rho and iteration % s.adaptive_rho_interval == 0:
            if work.adapt_rho(x, z, y):
                logger.debug(f"第 {iteration} 次迭代更新 rho={work.rho:.3e}", module="solver")

    if status == SolveStatus.OPTIMAL and s.polish and not polished:
        candidate = work.polish(z, y)
        if candidate is not None:
            x, z, y = candidate
            primal, dual, _, _ = work.residuals(x, z, y)
            polished = True
    elif status == SolveStatus.ITERATION_LIMIT and s.polish:
        candidate = work.polish(z, y, retry=True)
        if candidate is not None:
            x, z, y = candidate
            primal, dual, _, _ = work.residuals(x, z, y)
            status = SolveStatus.OPTIMAL
            polished = True
            logger.info(f"迭代上限处重猜活动集抛光成功，迭代 {iteration} 次", module="solver")

    x_out, y_out = work.unscale(x, y)
    if status != SolveStatus.OPTIMAL:
        logger.warning(f"QP 求解未达最优：{status.value}，迭代 {iteration} 次，"
                       f"原始残差 {primal:.3e}，对偶残差 {dual:.3e}", module="solver")
    return SolveResult(x=x_out, status=status, iterations=iteration,
                       primal_residual=primal, dual_residual=dual,
                       objective_value=problem.objective(x_out), duals=y_out,
                       method="qp", polished=polished)


# ---------------------------------------------------------------------------
# 校验工具
# ---------------------------------------------------------------------------

def kkt_residuals(problem, x, duals):
    """
    KKT 残差（∞-范数）

    Args:
        problem (StandardProblem): 问题
        x (np.ndarray): 原始解
        duals (np.ndarray): Ā = [G; I] 各行的乘子，上界为正、下界为负

    Returns:
        tuple: (primal, dual, complementarity)
    """
    x = np.asarray(x, dtype=float).ravel()
    duals = np.asarray(duals, dtype=float).ravel()
    if x.size != problem.n or duals.size != problem.m + problem.n:
        raise SolverError("dimension mismatch between problem, solution and duals")

    A = problem.constraint_matrix
    lower, upper = problem.lower_bounds, problem.upper_bounds
    z = A @ x
    violation = np.maximum(z - upper, 0.0) + np.maximum(lower - z, 0.0)
    primal = _inf_norm(violation)

    stationarity = problem.P @ x + problem.q + A.T @ duals
    dual = _inf_norm(stationarity)

    positive = np.maximum(duals, 0.0)
    negative = np.maximum(-duals, 0.0)
    upper_gap = np.where(np.isfinite(upper), np.abs(upper - z), 1.0)
    lower_gap = np.where(np.isfinite(lower), np.abs(z - lower), 1.0)
    complementarity = max(_inf_norm(positive * upper_gap), _inf_norm(negative * lower_gap))
    return primal, dual, complementarity


def _as_sparse(A):
    if hasattr(A, "matrix") and hasattr(A, "link_count"):
        A = A.matrix
    return sp.csr_matrix(A, dtype=float)


def regularizer_value(A, lam, x):
    """g(x) = λ‖Ax‖²"""
    Ax = _as_sparse(A) @ np.asarray(x, dtype=float)
    return float(lam * Ax @ Ax)


def hessian_of_regularizer(A, lam):
    """
    正则项 g(x) = λ‖Ax‖² 的 Hessian：2λAᵀA

    Args:
        A: 关联矩阵
        lam (float): λ > 0

    Returns:
        scipy.sparse.csc_matrix: Hessian
    """
    if not lam > 0:
        raise SolverError(f"lambda must be positive, got {lam}")
    M = _as_sparse(A)
    return (2.0 * lam * (M.T @ M)).tocsc()


def _write_triplets(lines, label, matrix):
    coo = sp.coo_matrix(matrix)
    lines.append(f"{label} {coo.nnz}")
    for i, j, v in zip(coo.row, coo.col, coo.data):
        lines.append(f"{int(i)} {int(j)} {float(v)!r}")


def export_problem(problem, path):
    """
    导出纯文本稀疏三元组格式，浮点数以 repr 写出保证逐位往返

    Args:
        problem (StandardProblem): 问题
        path (str): 输出路径
    """
    lines = [EXPORT_MAGIC, f"dims {problem.n} {problem.m}", f"offset {float(problem.offset)!r}"]
    _write_triplets(lines, "P", problem.P)
    lines.append("q")
    lines += [repr(float(v)) for v in problem.q]
    _write_triplets(lines, "G", problem.G)
    lines.append("row-bounds")
    lines += [f"{float(lo)!r} {float(hi)!r}" for lo, hi in zip(problem.g_lower, problem.g_upper)]
    lines.append("var-bounds")
    lines += [f"{float(lo)!r} {float(hi)!r}" for lo, hi in zip(problem.x_lower, problem.x_upper)]
    lines.append("end")
    with open(path, 'w', encoding='utf-8') as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"问题已导出：{path}（n={problem.n}, m={problem.m}）", module="solver")


class _LineReader:
    def __init__(self, path, lines):
        self.path = path
        self.lines = lines
        self.position = 0

    def next(self):
        if self.position >= len(self.lines):
            raise SolverError(f"{self.path}: unexpected end of file")
        self.position += 1
        return self.lines[self.position - 1].strip()

    def expect(self, keyword):
        parts = self.next().split()
        if not parts or parts[0] != keyword:
            raise SolverError(f"{self.path}:{self.position}: expected '{keyword}'")
        return parts[1:]

    def triplets(self, keyword, shape):
        count = int(self.expect(keyword)[0])
        rows, cols, vals = [], [], []
        for _ in range(count):
            i, j, v = self.next().split()
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(v))
        return sp.coo_matrix((vals, (rows, cols)), shape=shape)

    def vector(self, count):
        return np.array([float(self.next()) for _ in range(count)])

    def pairs(self, count):
        values = [self.next().split() for _ in range(count)]
        return np.array([float(a) for a, _ in values]), np.array([float(b) for _, b in values])


def import_problem(path):
    """
    读取 export_problem 写出的问题文件

    Args:
        path (str): 文件路径

    Returns:
        StandardProblem: 问题
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.read().splitlines()
    except FileNotFoundError:
        raise SolverError(f"problem file not found: {path}")
    reader = _LineReader(path, lines)
    try:
        if reader.next() != EXPORT_MAGIC:
            raise SolverError(f"{path}: not a problem export file")
        n, m = (int(v) for v in reader.expect("dims"))
        offset = float(reader.expect("offset")[0])
        P = reader.triplets("P", (n, n))
        reader.expect("q")
        q = reader.vector(n)
        G = reader.triplets("G", (m, n))
        reader.expect("row-bounds")
        g_lower, g_upper = reader.pairs(m)
        reader.expect("var-bounds")
        x_lower, x_upper = reader.pairs(n)
        reader.expect("end")
    except ValueError as e:
        raise SolverError(f"{path}:{reader.position}: malformed record ({e})")
    return StandardProblem(P=P.tocsc(), q=q, G=G.tocsr(), g_lower=g_lower, g_upper=g_upper,
                           x_lower=x_lower, x_upper=x_upper, offset=offset)
