#!/usr/bin/env python3
"""
Model and simulation configuration files (JSON, versioned schema).

Unknown keys are rejected so that a typo in a model specification fails
loudly instead of silently fitting a different model.
"""
import json
import logging
import os
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
INTERCEPT = 'intercept'


class _Strict(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class ColumnsConfig(_Strict):
    series_id: str = 'series_id'
    time: str = 'time'
    y: str = 'y'
    m: Optional[str] = None


class FixedEffectConfig(_Strict):
    name: str
    # "series": one parameter per series, "common": one shared parameter,
    # mapping: one parameter per named group of series ids
    sharing: Union[Literal['series', 'common'], Dict[str, List[str]]] = 'series'


class SerialGroupConfig(_Strict):
    name: str
    p: int = Field(1, ge=0)
    q: int = Field(0, ge=0)
    series: List[str]


class SerialConfig(_Strict):
    p: int = Field(1, ge=0)
    q: int = Field(0, ge=0)
    sharing: Literal['series', 'common'] = 'series'
    groups: Optional[List[SerialGroupConfig]] = None

    @model_validator(mode='after')
    def _unique_membership(self):
        if self.groups:
            names = [g.name for g in self.groups]
            if len(set(names)) != len(names):
                raise ValueError("serial group names must be unique")
            members = [s for g in self.groups for s in g.series]
            duplicated = sorted({s for s in members if members.count(s) > 1})
            if duplicated:
                raise ValueError(f"series assigned to more than one serial group: {duplicated}")
        return self


class RandomEffectsConfig(_Strict):
    covariates: List[str] = Field(default_factory=list)
    # 1-based (row, col) free entries of L in lambda order; default is the full lower triangle
    free: Optional[List[Tuple[int, int]]] = None


class LagBasisConfig(_Strict):
    input: str
    K: int = Field(3, ge=1, le=4)
    lags: int = Field(11, ge=1)
    difference: bool = False
    prefix: str = 'tf'

    @model_validator(mode='after')
    def _enough_lags(self):
        if self.lags < self.K:
            raise ValueError(f"lag_basis needs lags >= K (got lags={self.lags}, K={self.K})")
        return self


class QuadratureConfig(_Strict):
    schedule: List[Tuple[int, int]] = Field(default_factory=lambda: [(3, 20), (5, 50)])

    @field_validator('schedule')
    @classmethod
    def _nondecreasing(cls, schedule):
        if not schedule:
            raise ValueError("schedule needs at least one (Q, max_iters) stage")
        qs = [q for q, _ in schedule]
        if any(q < 1 for q in qs):
            raise ValueError("Q values must be >= 1")
        if any(b < a for a, b in zip(qs, qs[1:])):
            raise ValueError("Q values must be nondecreasing across stages")
        if any(it < 1 for _, it in schedule):
            raise ValueError("max_iters must be >= 1")
        return schedule


class OptimizerConfig(_Strict):
    grad_tol: float = Field(1e-6, gt=0)
    param_tol: float = Field(1e-8, gt=0)
    max_halvings: int = Field(10, ge=0)
    ridge: float = Field(1e-4, gt=0)
    inner_tol: float = Field(1e-8, gt=0)
    inner_max_iter: int = Field(50, ge=1)


class ModelConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    family: Literal['binary', 'binomial', 'poisson']
    columns: ColumnsConfig = Field(default_factory=ColumnsConfig)
    fixed_effects: List[FixedEffectConfig]
    serial: SerialConfig = Field(default_factory=SerialConfig)
    random_effects: RandomEffectsConfig = Field(default_factory=RandomEffectsConfig)
    lag_basis: Optional[LagBasisConfig] = None
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    seed: int = 0

    @model_validator(mode='after')
    def _consistent(self):
        names = [fe.name for fe in self.fixed_effects]
        if len(set(names)) != len(names):
            raise ValueError("fixed effect names must be unique")
        re_names = self.random_effects.covariates
        if len(set(re_names)) != len(re_names):
            raise ValueError("random effect covariates must be unique")
        if self.family == 'binary' and self.columns.m is not None:
            logger.info("binary family ignores the trial column; m is fixed at 1")
        return self

    def lag_covariate_names(self) -> List[str]:
        if self.lag_basis is None:
            return []
        return [f"{self.lag_basis.prefix}_h{k}" for k in range(1, self.lag_basis.K + 1)]


class CovariateGenerator(_Strict):
    # constant: every value equals `value`; normal, shared_normal: N(0, scale^2) white noise,
    # drawn per series or once for the whole panel
    kind: Literal['constant', 'normal', 'shared_normal']
    value: float = 1.0
    scale: float = 1.0


class SimulationConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    model: Union[ModelConfig, str]
    n_series: int = Field(..., ge=1)
    n_obs: Union[int, List[int]] = 200
    trials: int = Field(1, ge=1)
    covariates: Dict[str, CovariateGenerator] = Field(default_factory=dict)
    truth: Dict[str, float]
    seed: int = 0

    @model_validator(mode='after')
    def _lengths(self):
        if isinstance(self.n_obs, list):
            if len(self.n_obs) != self.n_series:
                raise ValueError(f"n_obs lists {len(self.n_obs)} lengths for {self.n_series} series")
            if any(n < 1 for n in self.n_obs):
                raise ValueError("every n_obs entry must be >= 1")
        elif self.n_obs < 1:
            raise ValueError("n_obs must be >= 1")
        return self

    def series_lengths(self) -> List[int]:
        if isinstance(self.n_obs, list):
            return list(self.n_obs)
        return [self.n_obs] * self.n_series


def _format_errors(exc: ValidationError) -> List[str]:
    errors = []
    for err in exc.errors():
        where = '.'.join(str(p) for p in err.get('loc', ())) or '<root>'
        errors.append(f"{where}: {err.get('msg')}")
    return errors


def _read_json(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError([f"config file not found: {path}"])
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}: invalid JSON ({e})"])


def parse_model_config(raw: dict) -> ModelConfig:
    try:
        return ModelConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_errors(e))


def load_model_config(path: str) -> ModelConfig:
    config = parse_model_config(_read_json(path))
    logger.info(f"Loaded model config from {path} (family={config.family})")
    return config


def load_simulation_config(path: str) -> SimulationConfig:
    raw = _read_json(path)
    try:
        config = SimulationConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_errors(e))
    if isinstance(config.model, str):
        model_path = config.model
        if not os.path.isabs(model_path):
            model_path = os.path.join(os.path.dirname(os.path.abspath(path)), model_path)
        config = config.model_copy(update={'model': load_model_config(model_path)})
    logger.info(f"Loaded simulation config from {path} ({config.n_series} series)")
    return config
