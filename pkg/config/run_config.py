#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验配置模块
单个 JSON 实验配置文件的模式校验（未知键直接拒绝），相对路径按配置文件所在目录解析
"""

import json
import os
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from config.config_loader import config_loader
from core.errors import ConfigError
from core.formulation import TEObjective, default_lambda
from core.solver import SolverSettings


def _resolve_path(value, info: ValidationInfo):
    if value is None or os.path.isabs(value):
        return value
    base = (info.context or {}).get("base_dir")
    return os.path.normpath(os.path.join(base, value)) if base else value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class DemandsConfig(_Section):
    source: Literal["file", "gravity", "history"] = "gravity"
    path: Optional[str] = None
    masses: Union[Literal["uniform", "skewed"], Dict[int, float]] = "uniform"
    total_gbps: float = Field(1000.0, gt=0)
    mass_seed: int = Field(0, ge=0)
    top_fraction: float = Field(1.0, gt=0, le=1)

    @field_validator("path")
    @classmethod
    def resolve_relative(cls, value, info: ValidationInfo):
        return _resolve_path(value, info)

    @model_validator(mode="after")
    def _check_source(self):
        if self.source in ("file", "history") and not self.path:
            raise ValueError(f"demands.path is required when source is '{self.source}'")
        return self


class PerturbationConfig(_Section):
    kind: Literal["parametric", "empirical"] = "parametric"
    sigma: float = Field(0.087, gt=0, le=1)
    path: Optional[str] = None

    @field_validator("path")
    @classmethod
    def resolve_relative(cls, value, info: ValidationInfo):
        return _resolve_path(value, info)

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "empirical" and not self.path:
            raise ValueError("perturbation.path is required for the empirical model")
        return self


def _slicing_default(key, fallback):
    return lambda: config_loader.get(f"slicing.{key}", fallback)


class SlicingSection(_Section):
    source: Literal["file", "generate"] = "generate"
    path: Optional[str] = None
    k: Optional[int] = Field(None, ge=2)
    sizes: Optional[List[int]] = None
    epsilon: float = Field(default_factory=_slicing_default("epsilon", 0.2), ge=0, le=1)
    max_retries: int = Field(default_factory=_slicing_default("max_retries", 1000), ge=1)
    candidates: int = Field(default_factory=_slicing_default("candidates", 100), ge=1)
    weight_mode: Literal["mean", "max"] = "mean"
    strategy: Literal["balanced", "random"] = "balanced"

    @field_validator("path")
    @classmethod
    def resolve_relative(cls, value, info: ValidationInfo):
        return _resolve_path(value, info)

    @model_validator(mode="after")
    def _check_source(self):
        if self.source == "file" and not self.path:
            raise ValueError("slicing.path is required when source is 'file'")
        if self.sizes is not None:
            if any(s < 1 for s in self.sizes):
                raise ValueError("slicing.sizes must be positive")
            if self.k is not None and len(self.sizes) != self.k:
                raise ValueError(f"slicing.sizes has {len(self.sizes)} entries, expected k={self.k}")
        return self


class PathsConfig(_Section):
    strategy: Literal["ksp", "edsj"] = "ksp"
    k: int = Field(4, ge=1)
    cache: Optional[str] = None

    @field_validator("cache")
    @classmethod
    def resolve_relative(cls, value, info: ValidationInfo):
        return _resolve_path(value, info)


class PruningConfig(_Section):
    divergence_free: bool = False
    beta: Optional[float] = Field(None, gt=0)


class TEConfig(_Section):
    objective: TEObjective = TEObjective.MT
    lam: Optional[float] = Field(None, alias="lambda", ge=0)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    pruning: PruningConfig = Field(default_factory=PruningConfig)
    normalize_capacity: bool = False
    phantom_edges: bool = False
    baselines: List[Literal["scratch"]] = Field(default_factory=list)

    @property
    def effective_lambda(self):
        return default_lambda(self.objective) if self.lam is None else self.lam


class PermuteConfig(_Section):
    cap: int = Field(default_factory=lambda: config_loader.get("experiment.permute_cap", 5040), ge=1)


class RunConfig(_Section):
    """实验配置"""
    topology: str
    demands: DemandsConfig = Field(default_factory=DemandsConfig)
    perturbation: PerturbationConfig = Field(default_factory=PerturbationConfig)
    slicing: SlicingSection = Field(default_factory=SlicingSection)
    te: TEConfig = Field(default_factory=TEConfig)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    iterations: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    output_dir: str = "./results"
    permute: PermuteConfig = Field(default_factory=PermuteConfig)
    lambda_sweep: List[float] = Field(default_factory=list)

    @field_validator("topology", "output_dir")
    @classmethod
    def resolve_relative(cls, value, info: ValidationInfo):
        return _resolve_path(value, info)

    @field_validator("lambda_sweep")
    @classmethod
    def _check_sweep(cls, values):
        if any(v < 0 for v in values):
            raise ValueError("lambda_sweep values must be non-negative")
        return values


def load_run_config(path):
    """
    加载并校验实验配置

    Args:
        path (str): JSON 配置文件路径

    Returns:
        RunConfig: 校验后的配置
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"run config not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    base_dir = os.path.dirname(os.path.abspath(path))
    return RunConfig.model_validate(data, context={"base_dir": base_dir})


def apply_overrides(config, seed=None, iterations=None, lam=None, out=None):
    """
    命令行参数覆盖配置标量后重新校验

    Args:
        config (RunConfig): 原配置
        seed (int): --seed
        iterations (int): --iterations
        lam (float): --lambda
        out (str): --out，相对当前目录解析

    Returns:
        RunConfig: 新配置
    """
    data = config.model_dump(by_alias=True, mode="json")
    if seed is not None:
        data["seed"] = seed
    if iterations is not None:
        data["iterations"] = iterations
    if lam is not None:
        data["te"]["lambda"] = lam
    if out is not None:
        data["output_dir"] = os.path.abspath(out)
    return RunConfig.model_validate(data)
