#!/usr/bin/env python3
"""
Panel data ingestion and model assembly.

Reads long-format CSV (one row per series and time point), validates it and
builds the per-series design matrices, the constraint matrices A_beta, A_tau
and the random-effect structure described by a ModelConfig.
"""
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import ConfigError, ContractError, DataError, DomainError
from expfam import Family, check_support
from glarma_kernel import ArmaParams, SeriesData
from lag_design import LagBasis, basis_matrix, difference, lag_covariates
from model_config import INTERCEPT, ModelConfig
from ranef import LStructure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PanelData:
    series: Tuple[SeriesData, ...]
    family: Family

    @property
    def J(self) -> int:
        return len(self.series)

    @property
    def ids(self) -> List[str]:
        return [s.series_id for s in self.series]

    @property
    def total_obs(self) -> int:
        return int(sum(s.n for s in self.series))

    def reordered(self, order: Sequence[int]) -> 'PanelData':
        return PanelData(series=tuple(self.series[i] for i in order), family=self.family)


@dataclass(frozen=True)
class SeriesTheta:
    """Per-series state parameters implied by Psi."""
    beta: np.ndarray
    arma: ArmaParams
    lam: np.ndarray


@dataclass(frozen=True)
class ConstraintMap:
    """beta = A_beta psi_beta, tau = A_tau psi_tau, Psi = (psi_beta, psi_tau, lambda)."""
    A_beta: np.ndarray
    A_tau: np.ndarray
    beta_slices: Tuple[slice, ...]
    tau_slices: Tuple[slice, ...]
    orders: Tuple[Tuple[int, int], ...]
    n_lambda: int
    names: Tuple[str, ...]
    components: Tuple[str, ...]
    bases: Tuple[str, ...]

    def __post_init__(self):
        if len(self.beta_slices) != len(self.tau_slices) or len(self.tau_slices) != len(self.orders):
            raise ContractError("constraint map needs one beta slice, tau slice and order per series")
        if len(self.names) != self.size:
            raise ContractError(f"{len(self.names)} parameter names for {self.size} parameters")
        for j, (p, q) in enumerate(self.orders):
            sl = self.tau_slices[j]
            if sl.stop - sl.start != p + q:
                raise ContractError(f"series #{j}: tau slice does not match orders ({p}, {q})")

    @property
    def n_psi_beta(self) -> int:
        return self.A_beta.shape[1]

    @property
    def n_psi_tau(self) -> int:
        return self.A_tau.shape[1]

    @property
    def size(self) -> int:
        return self.n_psi_beta + self.n_psi_tau + self.n_lambda

    @property
    def lambda_slice(self) -> slice:
        start = self.n_psi_beta + self.n_psi_tau
        return slice(start, start + self.n_lambda)

    def split(self, psi) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        psi = np.asarray(psi, dtype=float).reshape(-1)
        if len(psi) != self.size:
            raise ContractError(f"Psi has {len(psi)} entries, model has {self.size}")
        nb, nt = self.n_psi_beta, self.n_psi_tau
        return psi[:nb], psi[nb:nb + nt], psi[nb + nt:]

    def join(self, psi_beta, psi_tau, lam) -> np.ndarray:
        return np.concatenate([np.ravel(psi_beta), np.ravel(psi_tau), np.ravel(lam)]).astype(float)

    def series_theta(self, j: int, psi) -> SeriesTheta:
        psi_beta, psi_tau, lam = self.split(psi)
        beta = self.A_beta[self.beta_slices[j]] @ psi_beta
        tau = self.A_tau[self.tau_slices[j]] @ psi_tau
        p, _ = self.orders[j]
        return SeriesTheta(beta=beta, arma=ArmaParams.of(tau[:p], tau[p:]), lam=lam)

    def series_jacobian(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Indices of Psi that series j depends on and d theta_j / d Psi[indices].

        theta_j is laid out as the filter expects: (beta_j, lambda, phi_j, theta_j).
        """
        Ab = self.A_beta[self.beta_slices[j]]
        At = self.A_tau[self.tau_slices[j]]
        beta_cols = np.flatnonzero(np.any(Ab != 0, axis=0))
        tau_cols = np.flatnonzero(np.any(At != 0, axis=0))
        lam_idx = np.arange(self.lambda_slice.start, self.lambda_slice.stop)
        index = np.concatenate([beta_cols, self.n_psi_beta + tau_cols, lam_idx]).astype(int)
        nb, nl, nt = Ab.shape[0], self.n_lambda, At.shape[0]
        G = np.zeros((nb + nl + nt, len(index)))
        G[:nb, :len(beta_cols)] = Ab[:, beta_cols]
        G[nb + nl:, len(beta_cols):len(beta_cols) + len(tau_cols)] = At[:, tau_cols]
        G[nb:nb + nl, len(beta_cols) + len(tau_cols):] = np.eye(nl)
        return index, G

    def project(self, beta_stack: np.ndarray, tau_stack: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Least-squares psi_beta, psi_tau for stacked per-series estimates."""
        psi_beta = np.linalg.lstsq(self.A_beta, beta_stack, rcond=None)[0] if self.n_psi_beta else np.zeros(0)
        psi_tau = np.linalg.lstsq(self.A_tau, tau_stack, rcond=None)[0] if self.n_psi_tau else np.zeros(0)
        return psi_beta, psi_tau

    def index_of(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    constraints: ConstraintMap
    structure: LStructure
    x_names: Tuple[str, ...]
    r_names: Tuple[str, ...]
    series_ids: Tuple[str, ...]
    lag_basis: Optional[LagBasis] = None
    lag_names: Tuple[str, ...] = ()
    inner_tol: float = 1e-8
    inner_max_iter: int = 50
    inner_max_halvings: int = 10

    @property
    def d(self) -> int:
        return self.structure.d

    @property
    def n_params(self) -> int:
        return self.constraints.size


# ---------------------------------------------------------------------------
# constraint matrices


def _fixed_effect_blocks(config: ModelConfig, series_ids: List[str]):
    """A_beta columns and names, one block of columns per fixed covariate."""
    J = len(series_ids)
    b = len(config.fixed_effects)
    errors = []
    columns, names, bases = [], [], []
    for k, fe in enumerate(config.fixed_effects):
        if fe.sharing == 'common':
            groups = [(fe.name, list(range(J)))]
        elif fe.sharing == 'series':
            groups = [(f"{fe.name}[{sid}]", [j]) for j, sid in enumerate(series_ids)]
        else:
            groups = []
            assigned = []
            for group, members in fe.sharing.items():
                unknown = [s for s in members if s not in series_ids]
                if unknown:
                    errors.append(f"fixed effect '{fe.name}' group '{group}' names unknown series {unknown}")
                idx = [series_ids.index(s) for s in members if s in series_ids]
                assigned.extend(idx)
                groups.append((f"{fe.name}[{group}]", idx))
            missing = [series_ids[j] for j in range(J) if j not in assigned]
            twice = sorted({series_ids[j] for j in assigned if assigned.count(j) > 1})
            if missing:
                errors.append(f"fixed effect '{fe.name}': series {missing} belong to no group")
            if twice:
                errors.append(f"fixed effect '{fe.name}': series {twice} belong to several groups")
        for name, members in groups:
            col = np.zeros(J * b)
            for j in members:
                col[j * b + k] = 1.0
            columns.append(col)
            names.append(name)
            bases.append(fe.name)
    A = np.column_stack(columns) if columns else np.zeros((J * b, 0))
    return A, names, bases, errors


def _serial_blocks(config: ModelConfig, series_ids: List[str]):
    J = len(series_ids)
    serial = config.serial
    errors = []
    if serial.groups:
        groups = [(g.name, g.p, g.q, g.series) for g in serial.groups]
        members = [s for g in serial.groups for s in g.series]
        unknown = [s for s in members if s not in series_ids]
        missing = [s for s in series_ids if s not in members]
        if unknown:
            errors.append(f"serial groups name unknown series {unknown}")
        if missing:
            errors.append(f"series {missing} belong to no serial group")
    elif serial.sharing == 'common':
        groups = [(None, serial.p, serial.q, list(series_ids))]
    else:
        groups = [(sid, serial.p, serial.q, [sid]) for sid in series_ids]

    orders: List[Tuple[int, int]] = [(0, 0)] * J
    group_of: Dict[int, int] = {}
    for g, (_, p, q, members) in enumerate(groups):
        for sid in members:
            if sid in series_ids:
                j = series_ids.index(sid)
                orders[j] = (p, q)
                group_of[j] = g
    sizes = [p + q for p, q in orders]
    starts = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    tau_slices = tuple(slice(int(starts[j]), int(starts[j + 1])) for j in range(J))

    columns, names, bases = [], [], []
    for g, (label, p, q, _) in enumerate(groups):
        suffix = '' if label is None else f"[{label}]"
        for kind, order in (('phi', p), ('theta', q)):
            for lag in range(1, order + 1):
                col = np.zeros(int(starts[-1]))
                for j, gj in group_of.items():
                    if gj != g:
                        continue
                    offset = lag - 1 if kind == 'phi' else orders[j][0] + lag - 1
                    col[tau_slices[j].start + offset] = 1.0
                columns.append(col)
                names.append(f"{kind}{lag}{suffix}")
                bases.append(f"{kind}{lag}")
    A = np.column_stack(columns) if columns else np.zeros((int(starts[-1]), 0))
    return A, names, bases, tuple(orders), tau_slices, errors


def build_constraints(config: ModelConfig, series_ids: List[str], structure: LStructure) -> ConstraintMap:
    A_beta, beta_names, beta_bases, errors = _fixed_effect_blocks(config, series_ids)
    A_tau, tau_names, tau_bases, orders, tau_slices, serial_errors = _serial_blocks(config, series_ids)
    errors.extend(serial_errors)
    if errors:
        raise ConfigError(errors)
    b = len(config.fixed_effects)
    beta_slices = tuple(slice(j * b, (j + 1) * b) for j in range(len(series_ids)))
    lam_names = structure.names()
    return ConstraintMap(
        A_beta=A_beta, A_tau=A_tau, beta_slices=beta_slices, tau_slices=tau_slices, orders=orders,
        n_lambda=structure.size,
        names=tuple(beta_names + tau_names + lam_names),
        components=tuple(['fixed'] * len(beta_names) + ['serial'] * len(tau_names) + ['random'] * len(lam_names)),
        bases=tuple(beta_bases + tau_bases + lam_names),
    )


def build_structure(config: ModelConfig) -> LStructure:
    d = len(config.random_effects.covariates)
    if config.random_effects.free is None:
        return LStructure.full(d)
    try:
        return LStructure.from_pairs(d, config.random_effects.free)
    except ContractError as e:
        raise ConfigError([f"random_effects.free: {e}"])


# ---------------------------------------------------------------------------
# ingestion


def load_panel_frame(csv_path: str) -> pd.DataFrame:
    """Load long-format panel data from CSV"""
    if not os.path.exists(csv_path):
        raise DataError([f"data file not found: {csv_path}"])
    try:
        df = pd.read_csv(csv_path)
    except Exception as e:
        raise DataError([f"could not read {csv_path}: {e}"])
    logger.info(f"Loaded {len(df)} rows from {csv_path}")
    return df


def _validate_frame(df: pd.DataFrame, config: ModelConfig, needed: List[str]) -> List[str]:
    cols = config.columns
    errors = []
    required = [cols.series_id, cols.time, cols.y] + ([cols.m] if cols.m else []) + needed
    missing = [c for c in dict.fromkeys(required) if c not in df.columns]
    if missing:
        return [f"missing columns: {missing}"]
    ids = df[cols.series_id].astype(str)
    # CSV row number = index + 2 (header is row 1)
    seen = set()
    previous = None
    for i, sid in enumerate(ids):
        if sid != previous:
            if sid in seen:
                errors.append(f"row {i + 2}: series '{sid}' reappears; rows must be sorted by series then time")
                break
            seen.add(sid)
            previous = sid
    for sid, block in df.groupby(ids, sort=False):
        times = block[cols.time].to_numpy()
        expected = np.arange(1, len(block) + 1)
        if len(times) != len(expected) or np.any(times != expected):
            bad = int(np.flatnonzero(times != expected)[0]) if len(times) == len(expected) else 0
            row = int(block.index[bad]) + 2
            if pd.Series(times).duplicated().any():
                errors.append(f"row {row}: duplicated (series, time) in series '{sid}'")
            else:
                errors.append(f"row {row}: series '{sid}' time index must run 1..n contiguously")
    numeric = [cols.y] + ([cols.m] if cols.m else []) + [c for c in needed if c != INTERCEPT]
    for c in dict.fromkeys(numeric):
        values = pd.to_numeric(df[c], errors='coerce')
        bad = np.flatnonzero(~np.isfinite(values.to_numpy(dtype=float)))
        if len(bad):
            errors.append(f"row {int(df.index[bad[0]]) + 2}: column '{c}' is missing or non-numeric")
    return errors


def _support_errors(df: pd.DataFrame, config: ModelConfig, family: Family) -> List[str]:
    cols = config.columns
    y = df[cols.y].to_numpy(dtype=float)
    m = df[cols.m].to_numpy(dtype=float) if (cols.m and family is Family.BINOMIAL) else np.ones(len(df))
    errors = []
    for i in range(len(df)):
        try:
            check_support(y[i], m[i], family)
        except DomainError as e:
            errors.append(f"row {int(df.index[i]) + 2}: {e}")
            if len(errors) >= 20:
                errors.append("... further support errors omitted")
                break
    return errors


def derived_lag_columns(frame: pd.DataFrame, config: ModelConfig) -> Tuple[pd.DataFrame, Optional[LagBasis]]:
    """Add the lag-basis covariates, computed series by series."""
    lb = config.lag_basis
    if lb is None:
        return frame, None
    basis = basis_matrix(lb.K, lb.lags)
    names = config.lag_covariate_names()
    frame = frame.copy()
    ids = frame[config.columns.series_id].astype(str)
    blocks = []
    for _, block in frame.groupby(ids, sort=False):
        inputs = block[lb.input].to_numpy(dtype=float)
        if lb.difference:
            inputs = difference(inputs)
        blocks.append(pd.DataFrame(lag_covariates(inputs, basis), columns=names, index=block.index))
    derived = pd.concat(blocks)
    for name in names:
        frame[name] = derived[name]
    return frame, basis


def _covariate_matrix(block: pd.DataFrame, names: Sequence[str]) -> np.ndarray:
    if not names:
        return np.zeros((len(block), 0))
    return np.column_stack([
        np.ones(len(block)) if name == INTERCEPT else block[name].to_numpy(dtype=float)
        for name in names
    ])


def raw_covariates(config: ModelConfig) -> List[str]:
    """Input columns the data file must provide, beyond ids, time, y and m."""
    lag_names = config.lag_covariate_names()
    names = [fe.name for fe in config.fixed_effects] + list(config.random_effects.covariates)
    if config.lag_basis is not None:
        names.append(config.lag_basis.input)
    return [c for c in dict.fromkeys(names) if c != INTERCEPT and c not in lag_names]


def build_panel(frame: pd.DataFrame, config: ModelConfig) -> Tuple[PanelData, ModelSpec]:
    """Validate a long-format frame against config and assemble PanelData and ModelSpec"""
    family = Family.parse(config.family)
    lag_names = config.lag_covariate_names()
    x_names = [fe.name for fe in config.fixed_effects]
    r_names = list(config.random_effects.covariates)
    errors = _validate_frame(frame, config, raw_covariates(config))
    if errors:
        raise DataError(errors)
    errors = _support_errors(frame, config, family)
    if errors:
        raise DataError(errors)

    frame, basis = derived_lag_columns(frame, config)
    cols = config.columns
    ids = frame[cols.series_id].astype(str)
    series = []
    for sid, block in frame.groupby(ids, sort=False):
        y = block[cols.y].to_numpy(dtype=float)
        if cols.m and family is Family.BINOMIAL:
            m = block[cols.m].to_numpy(dtype=float)
        else:
            m = np.ones(len(block))
        series.append(SeriesData(
            y=y, m=m,
            X=_covariate_matrix(block, x_names),
            R=_covariate_matrix(block, r_names),
            series_id=str(sid), x_names=list(x_names), r_names=list(r_names),
        ))
    series_ids = [s.series_id for s in series]
    structure = build_structure(config)
    constraints = build_constraints(config, series_ids, structure)
    spec = ModelSpec(
        family=family, constraints=constraints, structure=structure,
        x_names=tuple(x_names), r_names=tuple(r_names), series_ids=tuple(series_ids),
        lag_basis=basis, lag_names=tuple(lag_names),
        inner_tol=config.optimizer.inner_tol, inner_max_iter=config.optimizer.inner_max_iter,
        inner_max_halvings=config.optimizer.max_halvings,
    )
    panel = PanelData(series=tuple(series), family=family)
    logger.info(f"Built panel: J={panel.J}, total n={panel.total_obs}, S={spec.n_params}, d={spec.d}")
    return panel, spec


def load_panel(csv_path: str, config: ModelConfig) -> Tuple[PanelData, ModelSpec]:
    return build_panel(load_panel_frame(csv_path), config)


def read_psi(csv_path: str, spec: ModelSpec) -> np.ndarray:
    """Read a parameter CSV with columns parameter,estimate (as written by the fit report)."""
    df = load_panel_frame(csv_path)
    value_col = 'estimate' if 'estimate' in df.columns else 'value'
    if 'parameter' not in df.columns or value_col not in df.columns:
        raise DataError([f"{csv_path}: needs columns 'parameter' and 'estimate'"])
    values = dict(zip(df['parameter'].astype(str), df[value_col].astype(float)))
    names = spec.constraints.names
    missing = [n for n in names if n not in values]
    if missing:
        raise DataError([f"{csv_path}: missing parameters {missing}"])
    return np.array([values[n] for n in names])
