#!/usr/bin/env python3
"""
Forward simulation of GLARMA panels with random effects.

Every series draws from its own Philox stream spawned from the simulation
seed, in a fixed order: input covariates, then zeta_j, then y_1..y_n. Inputs
shared by all series come from a separate panel stream. The output does not
depend on how many workers run the series.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from errors import ConfigError, DivergenceError
from expfam import Family, residual_terms, sample
from glarma_kernel import next_alpha
from model_config import ModelConfig, SimulationConfig
from panel_data import ModelSpec, PanelData, build_panel, raw_covariates
from ranef import lambda_to_L
from reports import write_frame

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeriesLatents:
    zeta: np.ndarray
    U: np.ndarray
    W: np.ndarray
    alpha: np.ndarray
    e: np.ndarray


@dataclass(frozen=True)
class SimulatedPanel:
    frame: pd.DataFrame
    latents: pd.DataFrame
    panel: PanelData
    spec: ModelSpec
    psi: np.ndarray
    series_latents: List[SeriesLatents]

    @property
    def zeta(self) -> np.ndarray:
        return np.array([s.zeta for s in self.series_latents])

    @property
    def U(self) -> np.ndarray:
        return np.array([s.U for s in self.series_latents])


def series_ids(n_series: int) -> List[str]:
    return [f"s{j}" for j in range(1, n_series + 1)]


def truth_vector(spec: ModelSpec, truth: Dict[str, float]) -> np.ndarray:
    """Psi from a truth mapping keyed by full parameter name or by base name (e.g. 'phi1')."""
    cm = spec.constraints
    known = set(cm.names) | set(cm.bases)
    errors = [f"truth names unknown parameter '{k}'" for k in truth if k not in known]
    psi = np.zeros(cm.size)
    for i, (name, base) in enumerate(zip(cm.names, cm.bases)):
        if name in truth:
            psi[i] = truth[name]
        elif base in truth:
            psi[i] = truth[base]
        else:
            errors.append(f"truth has no value for '{name}'")
    if errors:
        raise ConfigError(errors)
    return psi


def _draw_inputs(sim: SimulationConfig, model: ModelConfig, streams: List[np.random.Generator],
                 panel_stream: np.random.Generator, lengths: List[int]) -> Dict[str, List[np.ndarray]]:
    needed = raw_covariates(model)
    missing = [name for name in needed if name not in sim.covariates]
    if missing:
        raise ConfigError([f"no covariate generator for {missing}"])
    n_max = max(lengths)
    shared = {}
    for name in needed:
        gen = sim.covariates[name]
        if gen.kind == 'shared_normal':
            shared[name] = gen.scale * panel_stream.standard_normal(n_max)
    inputs: Dict[str, List[np.ndarray]] = {name: [] for name in needed}
    for rng, n in zip(streams, lengths):
        for name in needed:
            gen = sim.covariates[name]
            if gen.kind == 'constant':
                values = np.full(n, gen.value)
            elif gen.kind == 'normal':
                values = gen.scale * rng.standard_normal(n)
            else:
                values = shared[name][:n]
            inputs[name].append(values)
    return inputs


def _design_frame(sim: SimulationConfig, model: ModelConfig, ids: List[str], lengths: List[int],
                  inputs: Dict[str, List[np.ndarray]]) -> pd.DataFrame:
    cols = model.columns
    data = {
        cols.series_id: np.repeat(ids, lengths),
        cols.time: np.concatenate([np.arange(1, n + 1) for n in lengths]),
        cols.y: np.zeros(sum(lengths), dtype=np.int64),
    }
    if cols.m:
        data[cols.m] = np.full(sum(lengths), sim.trials, dtype=np.int64)
    for name, values in inputs.items():
        data[name] = np.concatenate(values)
    return pd.DataFrame(data)


def simulate_series(panel: PanelData, spec: ModelSpec, j: int, psi: np.ndarray,
                    rng: np.random.Generator):
    """Run the GLARMA recursion generatively for series j, sampling y_t at each step."""
    series = panel.series[j]
    theta = spec.constraints.series_theta(j, psi)
    L = lambda_to_L(theta.lam, spec.structure)
    zeta = rng.standard_normal(spec.d)
    U = L @ zeta
    eta = series.X @ theta.beta + series.R @ L @ zeta
    n = series.n
    y = np.zeros(n, dtype=np.int64)
    W, alpha, e = np.zeros(n), np.zeros(n), np.zeros(n)
    for t in range(n):
        alpha[t] = next_alpha(alpha[:t], e[:t], theta.arma)
        W[t] = eta[t] + alpha[t]
        if not np.isfinite(W[t]):
            raise DivergenceError(t + 1, {'phi': theta.arma.phi, 'theta': theta.arma.theta_ma,
                                          'beta': theta.beta}, series=series.series_id)
        y[t] = sample(W[t], series.m[t], spec.family, rng)
        e[t] = residual_terms(y[t], W[t], series.m[t], spec.family).e
    return y, SeriesLatents(zeta=zeta, U=U, W=W, alpha=alpha, e=e)


def simulate_panel(sim: SimulationConfig, seed: Optional[int] = None, workers: int = 1) -> SimulatedPanel:
    model = sim.model
    if not isinstance(model, ModelConfig):
        raise ConfigError(["simulation config must resolve its model before simulating"])
    family = Family.parse(model.family)
    if family is Family.BINOMIAL and sim.trials > 1 and model.columns.m is None:
        raise ConfigError(["binomial simulation with trials > 1 needs columns.m in the model config"])
    seed = sim.seed if seed is None else seed
    ids = series_ids(sim.n_series)
    lengths = sim.series_lengths()

    children = np.random.SeedSequence(seed).spawn(sim.n_series + 1)
    panel_stream = np.random.Generator(np.random.Philox(children[0]))
    streams = [np.random.Generator(np.random.Philox(child)) for child in children[1:]]

    inputs = _draw_inputs(sim, model, streams, panel_stream, lengths)
    frame = _design_frame(sim, model, ids, lengths, inputs)
    design, spec = build_panel(frame, model)
    psi = truth_vector(spec, sim.truth)

    def one(j: int):
        return simulate_series(design, spec, j, psi, streams[j])

    if workers > 1 and sim.n_series > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(one, range(sim.n_series)))
    else:
        results = [one(j) for j in range(sim.n_series)]

    frame[model.columns.y] = np.concatenate([y for y, _ in results])
    panel, spec = build_panel(frame, model)

    latent_rows = []
    for sid, (_, lat) in zip(ids, results):
        block = pd.DataFrame({'series_id': sid, 'time': np.arange(1, len(lat.W) + 1),
                              'W': lat.W, 'alpha': lat.alpha, 'e': lat.e})
        for k, name in enumerate(spec.r_names):
            block[f"zeta_{name}"] = lat.zeta[k]
            block[f"U_{name}"] = lat.U[k]
        latent_rows.append(block)
    latents = pd.concat(latent_rows, ignore_index=True)
    logger.info(f"Simulated {sim.n_series} series ({sum(lengths)} observations, seed={seed})")
    return SimulatedPanel(frame=frame, latents=latents, panel=panel, spec=spec, psi=psi,
                          series_latents=[lat for _, lat in results])


def write_simulation(result: SimulatedPanel, out_dir: str) -> Dict[str, str]:
    return {
        'data': write_frame(result.frame, os.path.join(out_dir, 'data.csv')),
        'latents': write_frame(result.latents, os.path.join(out_dir, 'latents.csv')),
    }
